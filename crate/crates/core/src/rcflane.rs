//! Three-stage rainy-road synthesis: rain streaks, illumination mask, and
//! center-weighted fog.
//!
//! ```text
//! O1 = alpha * O + beta * R            alpha = 1 - R
//! O2 = gamma * O1 + (1 - gamma) * D
//! Ô  = O2 * td + A * (1 - td)          td = exp(-lambda * d),  d = max(0, S - |x - x_mid|)
//! ```
//!
//! The rain layer `R` is built from seeded Gaussian noise: the strongest
//! `density` fraction of samples become streak seeds, each seed is stamped
//! with a rotated, Gaussian-softened line kernel, and the result is rescaled
//! so its brightest value is 1.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`, which produces the same stream on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ImageBuffer, PixelCoord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainLayerConfig {
    /// Fraction of pixels that seed a streak.
    pub density: f64,
    pub streak_length: usize,
    /// Streak orientation, counter-clockwise from the +x axis with y pointing up.
    pub angle_deg: f64,
    pub noise_sigma: f64,
    /// Values of the normalized layer below this cutoff are set to zero.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RainLayerConfig {
    fn default() -> Self {
        Self {
            density: 0.01,
            streak_length: 15,
            angle_deg: 75.0,
            noise_sigma: 1.0,
            threshold: 0.0,
            seed: 0,
        }
    }
}

impl RainLayerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Config(format!(
                "density {} not in [0,1]",
                self.density
            )));
        }
        if self.streak_length < 1 {
            return Err(Error::Config("streak_length must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} not in [0,1]",
                self.threshold
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma {} must be > 0",
                self.noise_sigma
            )));
        }
        if !self.angle_deg.is_finite() {
            return Err(Error::Config("angle_deg must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// Weight kept from the rain-composited image.
    pub gamma: f64,
    /// Constant intensity of the mask layer `D`.
    pub mask_value: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            mask_value: 0.0,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} not in [0,1]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.mask_value) {
            return Err(Error::Config(format!(
                "mask_value {} not in [0,1]",
                self.mask_value
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FogConfig {
    /// Attenuation per pixel of distance score.
    pub lambda: f64,
    /// Atmospheric light `A`.
    pub atmos_light: f64,
    /// Fog scale `S` in pixels; `None` means half the image diagonal.
    pub fog_scale: Option<f64>,
    /// Densest-fog point; `None` means the central pixel.
    pub center: Option<PixelCoord>,
}

impl Default for FogConfig {
    fn default() -> Self {
        Self {
            lambda: 0.025,
            atmos_light: 0.5,
            fog_scale: None,
            center: None,
        }
    }
}

impl FogConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.atmos_light) {
            return Err(Error::Config(format!(
                "atmos_light {} not in [0,1]",
                self.atmos_light
            )));
        }
        if let Some(s) = self.fog_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("fog_scale {s} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcflaneConfig {
    pub rain: RainLayerConfig,
    /// Weight of the rain layer.
    pub beta: f64,
    pub mask: MaskConfig,
    pub fog: FogConfig,
}

impl Default for RcflaneConfig {
    fn default() -> Self {
        Self {
            rain: RainLayerConfig::default(),
            beta: 1.0,
            mask: MaskConfig::default(),
            fog: FogConfig::default(),
        }
    }
}

impl RcflaneConfig {
    /// No streaks, no darkening, no fog: synthesis returns its input.
    pub fn identity() -> Self {
        let mut cfg = Self::default();
        cfg.rain.density = 0.0;
        cfg.mask.gamma = 1.0;
        cfg.fog.lambda = 0.0;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.rain.validate()?;
        self.mask.validate()?;
        self.fog.validate()?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be >= 0", self.beta)));
        }
        Ok(())
    }
}

/// Real-valued per-pixel field (distance scores, transmission).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarField {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Copies the field into a single-channel image; values are clamped to `[0, 1]`.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_raw(
            self.width,
            self.height,
            1,
            self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }
}

/// Line kernel of `length` taps at `angle_deg`, softened by a small
/// Gaussian and normalized to unit sum. Returned as `(side, weights)`.
fn streak_kernel(length: usize, angle_deg: f64) -> (usize, Vec<f64>) {
    let core = if length % 2 == 1 { length } else { length + 1 };
    // one pixel margin each side for the softening blur
    let side = core + 2;
    let center = (side / 2) as f64;
    let theta = angle_deg.to_radians();
    let (dx, dy) = (theta.cos(), -theta.sin());

    let mut line = vec![0.0; side * side];
    let samples = 4 * length.max(1);
    let half = (length as f64 - 1.0) / 2.0;
    for s in 0..samples {
        let t = if samples == 1 {
            0.0
        } else {
            -half + 2.0 * half * s as f64 / (samples - 1) as f64
        };
        let (x, y) = (center + t * dx, center + t * dy);
        // bilinear splat
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (r, c) = (y0 as isize + oy, x0 as isize + ox);
                if r >= 0 && c >= 0 && (r as usize) < side && (c as usize) < side {
                    line[r as usize * side + c as usize] += wx * wy;
                }
            }
        }
    }

    const SIGMA: f64 = 0.5;
    let g: Vec<f64> = (-1..=1)
        .map(|i: i32| (-(i * i) as f64 / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let gsum: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / gsum).collect();
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; side * side];
        for r in 0..side {
            for c in 0..side {
                let mut acc = 0.0;
                for (k, w) in g.iter().enumerate() {
                    let o = k as isize - 1;
                    let (rr, cc) = if horizontal {
                        (r as isize, c as isize + o)
                    } else {
                        (r as isize + o, c as isize)
                    };
                    if rr >= 0 && cc >= 0 && (rr as usize) < side && (cc as usize) < side {
                        acc += w * src[rr as usize * side + cc as usize];
                    }
                }
                out[r * side + c] = acc;
            }
        }
        out
    };
    let soft = blur(&blur(&line, true), false);
    let total: f64 = soft.iter().sum();
    (side, soft.into_iter().map(|v| v / total).collect())
}

/// Generates the single-channel rain layer `R` on a black backdrop.
pub fn gen_rain_layer(cfg: &RainLayerConfig, width: usize, height: usize) -> Result<ImageBuffer> {
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!(
            "zero-sized rain layer {width}x{height}"
        )));
    }
    cfg.validate()?;
    let n = width * height;
    let mut layer = vec![0.0; n];
    let seeds = (cfg.density * n as f64).floor() as usize;
    if seeds == 0 {
        return Ok(ImageBuffer::from_raw(width, height, 1, layer));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
    let noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| noise[b].total_cmp(&noise[a]).then(a.cmp(&b)));

    let (side, kernel) = streak_kernel(cfg.streak_length, cfg.angle_deg);
    let half = (side / 2) as isize;
    for &idx in &order[..seeds] {
        let (row, col) = ((idx / width) as isize, (idx % width) as isize);
        for kr in 0..side {
            let r = row + kr as isize - half;
            if r < 0 || r >= height as isize {
                continue;
            }
            for kc in 0..side {
                let c = col + kc as isize - half;
                if c < 0 || c >= width as isize {
                    continue;
                }
                layer[r as usize * width + c as usize] += kernel[kr * side + kc];
            }
        }
    }

    let max = layer.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut layer {
            *v /= max;
            if *v < cfg.threshold {
                *v = 0.0;
            }
        }
    }
    Ok(ImageBuffer::from_raw(width, height, 1, layer))
}

/// Per-pixel retention weight `alpha = 1 - R`.
pub fn compute_alpha(rain: &ImageBuffer) -> Result<ImageBuffer> {
    if rain.channels() != 1 {
        return Err(Error::Shape(format!(
            "rain layer must be single-channel, got {}",
            rain.channels()
        )));
    }
    rain.map(|r| 1.0 - r)
}

/// `O1 = alpha * O + beta * R`, clamped, with `R` broadcast over channels.
pub fn compose_rain(orig: &ImageBuffer, rain: &ImageBuffer, beta: f64) -> Result<ImageBuffer> {
    if !orig.same_size(rain) {
        return Err(Error::Shape(format!(
            "rain layer {}x{} vs image {}x{}",
            rain.width(),
            rain.height(),
            orig.width(),
            orig.height()
        )));
    }
    let alpha = compute_alpha(rain)?;
    let ch = orig.channels();
    let data = orig
        .data()
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            let p = i / ch;
            (alpha.data()[p] * o + beta * rain.data()[p]).clamp(0.0, 1.0)
        })
        .collect();
    ImageBuffer::new(orig.width(), orig.height(), ch, data)
}

/// `O2 = gamma * img + (1 - gamma) * D` with a constant mask layer.
pub fn apply_mask(img: &ImageBuffer, cfg: &MaskConfig) -> Result<ImageBuffer> {
    cfg.validate()?;
    let (g, d) = (cfg.gamma, cfg.mask_value);
    img.map(|v| g * v + (1.0 - g) * d)
}

/// Default fog center: the middle pixel.
pub fn default_center(width: usize, height: usize) -> PixelCoord {
    PixelCoord::new((height - 1) / 2, (width - 1) / 2)
}

/// Default fog scale: half the image diagonal.
pub fn default_fog_scale(width: usize, height: usize) -> f64 {
    0.5 * (width as f64).hypot(height as f64)
}

/// `d(x) = max(0, S - ||x - x_mid||)` with the Euclidean norm.
pub fn distance_field(width: usize, height: usize, fog: &FogConfig) -> Result<ScalarField> {
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!("zero-sized field {width}x{height}")));
    }
    fog.validate()?;
    let center = fog.center.unwrap_or_else(|| default_center(width, height));
    if center.row >= height || center.col >= width {
        return Err(Error::Config(format!(
            "fog center ({}, {}) outside {width}x{height}",
            center.row, center.col
        )));
    }
    let scale = fog
        .fog_scale
        .unwrap_or_else(|| default_fog_scale(width, height));
    let mut data = Vec::with_capacity(width * height);
    for row in 0..height {
        let dy = row as f64 - center.row as f64;
        for col in 0..width {
            let dx = col as f64 - center.col as f64;
            data.push((scale - dx.hypot(dy)).max(0.0));
        }
    }
    Ok(ScalarField {
        width,
        height,
        data,
    })
}

/// `td(x) = exp(-lambda * d(x))`.
pub fn transmission(dfield: &ScalarField, lambda: f64) -> Result<ScalarField> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda {lambda} must be >= 0")));
    }
    if dfield.data.iter().any(|&d| d.is_nan() || d < 0.0) {
        return Err(Error::Config("distance field must be non-negative".into()));
    }
    Ok(ScalarField {
        width: dfield.width,
        height: dfield.height,
        data: dfield.data.iter().map(|&d| (-lambda * d).exp()).collect(),
    })
}

/// `Ô = img * td + A * (1 - td)` per channel.
pub fn apply_fog(img: &ImageBuffer, td: &ScalarField, atmos_light: f64) -> Result<ImageBuffer> {
    if img.width() != td.width || img.height() != td.height {
        return Err(Error::Shape(format!(
            "transmission {}x{} vs image {}x{}",
            td.width,
            td.height,
            img.width(),
            img.height()
        )));
    }
    let ch = img.channels();
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = td.data[i / ch];
            v * t + atmos_light * (1.0 - t)
        })
        .collect();
    ImageBuffer::new(img.width(), img.height(), ch, data)
}

/// Final rainy image plus every intermediate stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub rainy: ImageBuffer,
    pub rain_layer: ImageBuffer,
    /// After rain compositing.
    pub o1: ImageBuffer,
    /// After the illumination mask.
    pub o2: ImageBuffer,
    pub transmission: ScalarField,
}

pub fn synthesize(orig: &ImageBuffer, cfg: &RcflaneConfig) -> Result<Synthesis> {
    cfg.validate()?;
    let (w, h) = (orig.width(), orig.height());
    let rain_layer = gen_rain_layer(&cfg.rain, w, h)?;
    let o1 = compose_rain(orig, &rain_layer, cfg.beta)?;
    let o2 = apply_mask(&o1, &cfg.mask)?;
    let dfield = distance_field(w, h, &cfg.fog)?;
    let td = transmission(&dfield, cfg.fog.lambda)?;
    let rainy = apply_fog(&o2, &td, cfg.fog.atmos_light)?;
    Ok(Synthesis {
        rainy,
        rain_layer,
        o1,
        o2,
        transmission: td,
    })
}
