//! Per-pixel filtering with predicted kernel fields.
//!
//! Every output pixel `p` is a weighted sum over `levels` dilated `K x K`
//! windows around `p`, each level with its own stride:
//!
//! ```text
//! out[p] = sum_r sum_{i,j} w[p, r, i, j] * img[p + stride_r * (i - c, j - c)]
//! ```
//!
//! with `c = (K - 1) / 2`, replicate padding at the borders and a single
//! clamp to `[0, 1]` after the full sum. The summation order per pixel is
//! level-major, then kernel row, then kernel column, so the fast and the
//! naive paths agree bit for bit in practice.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

/// Tolerance on the per-pixel weight sum of a normalized field.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    width: usize,
    height: usize,
    levels: usize,
    ksize: usize,
    weights: Vec<f64>,
    normalized: bool,
}

impl KernelField {
    /// Wraps raw weights laid out as `[pixel][level][row][col]`.
    ///
    /// When `normalized` is set, every pixel's weights must sum to one.
    pub fn new(
        width: usize,
        height: usize,
        levels: usize,
        ksize: usize,
        weights: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        check_ksize(ksize)?;
        if levels == 0 {
            return Err(Error::Shape("kernel field needs at least one level".into()));
        }
        if weights.len() != width * height * levels * ksize * ksize {
            return Err(Error::Shape(format!(
                "kernel field has {} weights, expected {width}x{height}x{levels}x{ksize}x{ksize}",
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite kernel weight at index {i}"
            )));
        }
        let field = Self {
            width,
            height,
            levels,
            ksize,
            weights,
            normalized,
        };
        if normalized {
            let taps = field.taps_per_pixel();
            for (p, chunk) in field.weights.chunks_exact(taps).enumerate() {
                let sum: f64 = chunk.iter().sum();
                if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    return Err(Error::Numerical(format!(
                        "pixel {p} weights sum to {sum}, field flagged normalized"
                    )));
                }
            }
        }
        Ok(field)
    }

    pub(crate) fn from_raw(
        width: usize,
        height: usize,
        levels: usize,
        ksize: usize,
        weights: Vec<f64>,
        normalized: bool,
    ) -> Self {
        debug_assert_eq!(weights.len(), width * height * levels * ksize * ksize);
        Self {
            width,
            height,
            levels,
            ksize,
            weights,
            normalized,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn ksize(&self) -> usize {
        self.ksize
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn taps_per_pixel(&self) -> usize {
        self.levels * self.ksize * self.ksize
    }

    /// All weights of one pixel, `[level][row][col]`.
    pub fn pixel_weights(&self, row: usize, col: usize) -> &[f64] {
        let taps = self.taps_per_pixel();
        let start = (row * self.width + col) * taps;
        &self.weights[start..start + taps]
    }
}

fn check_ksize(ksize: usize) -> Result<()> {
    if ksize == 0 || ksize.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "kernel size {ksize} must be odd and >= 1"
        )));
    }
    Ok(())
}

/// Per-level pixel strides of the dilated windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DilationScheme {
    strides: Vec<usize>,
}

impl DilationScheme {
    pub fn new(strides: Vec<usize>) -> Result<Self> {
        if strides.is_empty() {
            return Err(Error::Config(
                "dilation scheme needs at least one stride".into(),
            ));
        }
        if strides[0] == 0 || strides.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "strides {strides:?} must be positive and strictly increasing"
            )));
        }
        Ok(Self { strides })
    }

    /// Strides `2^r` for `r = 0..levels`.
    pub fn hierarchical(levels: usize) -> Self {
        Self {
            strides: (0..levels).map(|r| 1usize << r).collect(),
        }
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn levels(&self) -> usize {
        self.strides.len()
    }

    /// Largest pixel offset touched by a `ksize` kernel.
    pub fn reach(&self, ksize: usize) -> usize {
        self.strides.last().copied().unwrap_or(0) * (ksize / 2)
    }
}

/// Delta kernels: level 0 center tap is one, everything else zero.
pub fn identity_field(
    width: usize,
    height: usize,
    ksize: usize,
    levels: usize,
) -> Result<KernelField> {
    check_ksize(ksize)?;
    if levels == 0 {
        return Err(Error::Shape("kernel field needs at least one level".into()));
    }
    let taps = levels * ksize * ksize;
    let center = (ksize / 2) * ksize + ksize / 2;
    let mut weights = vec![0.0; width * height * taps];
    for p in 0..width * height {
        weights[p * taps + center] = 1.0;
    }
    Ok(KernelField::from_raw(
        width, height, levels, ksize, weights, true,
    ))
}

fn check_compatible(img: &ImageBuffer, field: &KernelField, scheme: &DilationScheme) -> Result<()> {
    if img.width() != field.width || img.height() != field.height {
        return Err(Error::Shape(format!(
            "kernel field {}x{} vs image {}x{}",
            field.width,
            field.height,
            img.width(),
            img.height()
        )));
    }
    if scheme.levels() != field.levels {
        return Err(Error::Shape(format!(
            "dilation scheme has {} levels, field has {}",
            scheme.levels(),
            field.levels
        )));
    }
    Ok(())
}

/// Clamped source indices along one axis for every (level, tap) pair,
/// laid out `[level][tap][position]`.
fn offset_table(len: usize, ksize: usize, scheme: &DilationScheme) -> Vec<usize> {
    let c = (ksize / 2) as isize;
    let mut table = Vec::with_capacity(scheme.levels() * ksize * len);
    for &stride in scheme.strides() {
        for t in 0..ksize as isize {
            let off = stride as isize * (t - c);
            for x in 0..len as isize {
                table.push((x + off).clamp(0, len as isize - 1) as usize);
            }
        }
    }
    table
}

/// Filter without the final clamp. Rows are computed in parallel.
pub(crate) fn filter_unclamped(
    img: &ImageBuffer,
    field: &KernelField,
    scheme: &DilationScheme,
) -> Vec<f64> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let k = field.ksize;
    let taps = field.taps_per_pixel();
    let rows = offset_table(h, k, scheme);
    let cols = offset_table(w, k, scheme);
    let src = img.data();
    let mut out = vec![0.0; w * h * ch];
    out.par_chunks_mut(w * ch)
        .enumerate()
        .for_each(|(row, out_row)| {
            let mut acc = [0.0f64; 3];
            for col in 0..w {
                let kw = &field.weights[(row * w + col) * taps..][..taps];
                acc[..ch].fill(0.0);
                let mut t = 0;
                for level in 0..field.levels {
                    for i in 0..k {
                        let sr = rows[(level * k + i) * h + row];
                        let base = sr * w;
                        for j in 0..k {
                            let sc = cols[(level * k + j) * w + col];
                            let weight = kw[t];
                            t += 1;
                            let q = (base + sc) * ch;
                            for c in 0..ch {
                                acc[c] += weight * src[q + c];
                            }
                        }
                    }
                }
                out_row[col * ch..col * ch + ch].copy_from_slice(&acc[..ch]);
            }
        });
    out
}

/// Applies a per-pixel kernel field with hierarchical dilation.
pub fn apply_kernel_field(
    img: &ImageBuffer,
    field: &KernelField,
    scheme: &DilationScheme,
) -> Result<ImageBuffer> {
    check_compatible(img, field, scheme)?;
    let mut out = filter_unclamped(img, field, scheme);
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(ImageBuffer::from_raw(
        img.width(),
        img.height(),
        img.channels(),
        out,
    ))
}

/// Straight loop reference for [`apply_kernel_field`].
pub fn apply_kernel_field_naive(
    img: &ImageBuffer,
    field: &KernelField,
    scheme: &DilationScheme,
) -> Result<ImageBuffer> {
    check_compatible(img, field, scheme)?;
    let (w, h, ch) = (img.width() as isize, img.height() as isize, img.channels());
    let k = field.ksize as isize;
    let c0 = (k - 1) / 2;
    let mut out = Vec::with_capacity(img.data().len());
    for row in 0..h {
        for col in 0..w {
            let kw = field.pixel_weights(row as usize, col as usize);
            for c in 0..ch {
                let mut acc = 0.0;
                for (level, &stride) in scheme.strides().iter().enumerate() {
                    let s = stride as isize;
                    for i in 0..k {
                        for j in 0..k {
                            let r = (row + s * (i - c0)).clamp(0, h - 1) as usize;
                            let q = (col + s * (j - c0)).clamp(0, w - 1) as usize;
                            let weight =
                                kw[(level * field.ksize + i as usize) * field.ksize + j as usize];
                            acc += weight * img.get(r, q, c);
                        }
                    }
                }
                out.push(acc.clamp(0.0, 1.0));
            }
        }
    }
    Ok(ImageBuffer::from_raw(img.width(), img.height(), ch, out))
}

/// Gradient of a scalar loss with respect to every kernel weight, given the
/// gradient `grad_out` with respect to the (unclamped) filter output.
pub(crate) fn weight_gradients(
    img: &ImageBuffer,
    levels: usize,
    ksize: usize,
    scheme: &DilationScheme,
    grad_out: &[f64],
) -> Vec<f64> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let taps = levels * ksize * ksize;
    let rows = offset_table(h, ksize, scheme);
    let cols = offset_table(w, ksize, scheme);
    let src = img.data();
    let mut grad = vec![0.0; w * h * taps];
    grad.par_chunks_mut(w * taps)
        .enumerate()
        .for_each(|(row, grow)| {
            for col in 0..w {
                let g = &grad_out[(row * w + col) * ch..][..ch];
                let gk = &mut grow[col * taps..][..taps];
                let mut t = 0;
                for level in 0..levels {
                    for i in 0..ksize {
                        let base = rows[(level * ksize + i) * h + row] * w;
                        for j in 0..ksize {
                            let q = (base + cols[(level * ksize + j) * w + col]) * ch;
                            let mut acc = 0.0;
                            for c in 0..ch {
                                acc += g[c] * src[q + c];
                            }
                            gk[t] = acc;
                            t += 1;
                        }
                    }
                }
            }
        });
    grad
}
