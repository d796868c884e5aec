//! Reconstruction quality (PSNR, SSIM) and depth-map accuracy metrics.

use std::path::Path;

use image::{DynamicImage, ImageBuffer as ImgBuf, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{luma, ImageBuffer};

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_MIN_MSE: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Default upper clamp for depth evaluation, in meters.
pub const DEFAULT_DEPTH_CAP: f64 = 80.0;
/// Lower clamp for depth evaluation, in meters.
pub const MIN_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
}

/// `10 log10(1 / MSE)` on unit-interval data, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse < PSNR_MIN_MSE {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = g.iter().sum();
    g.into_iter().map(|v| v / sum).collect()
}

/// Separable valid-region filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut horiz = vec![0.0; ow * h];
    for r in 0..h {
        let row = &plane[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = g.iter().zip(&row[c..c + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (k, gk) in g.iter().enumerate() {
                acc += gk * horiz[(r + k) * ow + c];
            }
            out[r * ow + c] = acc;
        }
    }
    out
}

/// Single-scale SSIM on luma: 11x11 Gaussian window (sigma 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, `L = 1`, averaged over valid window positions.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let (x, y) = (luma(a), luma(b));
    let (x, y) = (x.data(), y.data());
    let g = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mu_x = filter_valid(x, w, h, &g);
    let mu_y = filter_valid(y, w, h, &g);
    let e_xx = filter_valid(&xx, w, h, &g);
    let e_yy = filter_valid(&yy, w, h, &g);
    let e_xy = filter_valid(&xy, w, h, &g);

    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        total +=
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / n as f64)
}

pub fn recon_metrics(restored: &ImageBuffer, clean: &ImageBuffer) -> Result<ReconMetrics> {
    Ok(ReconMetrics {
        psnr_db: psnr(restored, clean)?,
        ssim: ssim(restored, clean)?,
    })
}

/// Metric depth raster with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if n == 0 || depth.len() != n || valid.len() != n {
            return Err(Error::Shape(format!(
                "depth map {width}x{height} with {} depths and {} mask entries",
                depth.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| valid[i] && !(depth[i] > 0.0 && depth[i].is_finite())) {
            return Err(Error::Numerical(format!(
                "valid depth pixel {i} has value {}",
                depth[i]
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    /// Every positive finite depth is valid.
    pub fn from_depths(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        let valid = depth.iter().map(|d| *d > 0.0 && d.is_finite()).collect();
        let depth = depth
            .into_iter()
            .map(|d| if d.is_finite() { d } else { 0.0 })
            .collect();
        Self::new(width, height, depth, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Reads a 16-bit grayscale PNG where `depth = raw / 256` meters and raw 0 is invalid.
    pub fn load_png16(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        let DynamicImage::ImageLuma16(img) = decoded else {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!(
                    "depth maps must be 16-bit grayscale, got {:?}",
                    decoded.color()
                ),
            });
        };
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.into_raw();
        let valid = raw.iter().map(|&r| r != 0).collect();
        let depth = raw.iter().map(|&r| r as f64 / 256.0).collect();
        Self::new(w, h, depth, valid)
    }

    /// Writes the 16-bit encoding read by [`load_png16`](Self::load_png16).
    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw: Vec<u16> = self
            .depth
            .iter()
            .zip(&self.valid)
            .map(|(&d, &v)| {
                if v {
                    (d * 256.0).round().clamp(1.0, 65535.0) as u16
                } else {
                    0
                }
            })
            .collect();
        let img: ImgBuf<Luma<u16>, Vec<u16>> =
            ImgBuf::from_raw(self.width as u32, self.height as u32, raw).expect("length checked");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Encode {
                    path: path.to_path_buf(),
                    reason: other.to_string(),
                },
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub const COLUMNS: [&'static str; 8] = [
        "abs_rel", "sq_rel", "rmse", "rmse_log", "log10", "delta1", "delta2", "delta3",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.log10,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    /// Unweighted mean over several evaluations.
    pub fn mean(all: &[DepthMetrics]) -> Option<DepthMetrics> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let mut acc = [0.0; 8];
        for m in all {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v / n;
            }
        }
        Some(DepthMetrics {
            abs_rel: acc[0],
            sq_rel: acc[1],
            rmse: acc[2],
            rmse_log: acc[3],
            log10: acc[4],
            delta1: acc[5],
            delta2: acc[6],
            delta3: acc[7],
        })
    }
}

/// Standard depth errors and threshold accuracies over pixels valid in `gt`,
/// both maps clamped to `[MIN_DEPTH, cap]`.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, cap: f64) -> Result<DepthMetrics> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Shape(format!(
            "predicted depth {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    if cap.is_nan() || cap <= MIN_DEPTH {
        return Err(Error::Config(format!(
            "depth cap {cap} must exceed {MIN_DEPTH}"
        )));
    }
    let mut n = 0usize;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log, mut log10) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    let thresholds = [1.25f64, 1.25f64.powi(2), 1.25f64.powi(3)];
    for i in 0..gt.depth.len() {
        if !gt.valid[i] {
            continue;
        }
        let t = gt.depth[i].clamp(MIN_DEPTH, cap);
        let d = pred.depth[i].clamp(MIN_DEPTH, cap);
        let diff = d - t;
        abs_rel += diff.abs() / t;
        sq_rel += diff * diff / t;
        sq += diff * diff;
        sq_log += (d.ln() - t.ln()).powi(2);
        log10 += (d.log10() - t.log10()).abs();
        let ratio = (d / t).max(t / d);
        for (hit, thr) in hits.iter_mut().zip(thresholds) {
            if ratio < thr {
                *hit += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset(
            "ground truth has no valid depth pixels".into(),
        ));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        log10: log10 / nf,
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
    })
}
