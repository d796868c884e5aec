//! Forward pass, dual-layer inference and hand-written reverse mode.
//!
//! Activations are stored pixel-major (`[row][col][channel]`). Hidden
//! stages are 3x3 convolutions with replicate padding followed by `tanh`;
//! the 1x1 head emits `R * K * K` logits that a per-pixel softmax turns
//! into a normalized kernel field.

use rayon::prelude::*;

use super::model::{ConvStage, DlkpnModel, Gradients, KpnModel};
use crate::error::{Error, Result};
use crate::kernel_filter::{self, KernelField};
use crate::raster::ImageBuffer;

/// Output rows per im2col block; bounds the scratch matrix on large images.
const ROW_BLOCK: usize = 16;

/// Unrolls `rows` output rows starting at `row0` into a
/// `(rows * width) x (k * k * cin)` matrix with replicate padding. Column
/// order is `[tap][in]`, matching the weight layout.
fn im2col(
    input: &[f64],
    width: usize,
    height: usize,
    cin: usize,
    k: usize,
    row0: usize,
    rows: usize,
) -> Vec<f64> {
    let half = (k / 2) as isize;
    let stride = k * k * cin;
    let mut col = vec![0.0; rows * width * stride];
    for (dr, block_row) in col.chunks_exact_mut(width * stride).enumerate() {
        let row = (row0 + dr) as isize;
        for c in 0..width {
            let dst = &mut block_row[c * stride..(c + 1) * stride];
            for ki in 0..k {
                let r = (row + ki as isize - half).clamp(0, height as isize - 1) as usize;
                for kj in 0..k {
                    let cc =
                        (c as isize + kj as isize - half).clamp(0, width as isize - 1) as usize;
                    let tap = ki * k + kj;
                    dst[tap * cin..(tap + 1) * cin]
                        .copy_from_slice(&input[(r * width + cc) * cin..][..cin]);
                }
            }
        }
    }
    col
}

/// `c = a * b + beta * c` for row-major operands given as (rows, cols, row stride, col stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every operand slice covers the index range implied by its
    // dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(input: &[f64], width: usize, height: usize, stage: &ConvStage) -> Vec<f64> {
    let (cin, cout, k) = (stage.in_ch, stage.out_ch, stage.kernel);
    let depth = k * k * cin;
    let mut out = vec![0.0; width * height * cout];
    out.par_chunks_mut(ROW_BLOCK * width * cout)
        .enumerate()
        .for_each(|(block, out_block)| {
            let row0 = block * ROW_BLOCK;
            let pixels = out_block.len() / cout;
            for px in out_block.chunks_exact_mut(cout) {
                px.copy_from_slice(&stage.bias);
            }
            let unrolled;
            let col: &[f64] = if k == 1 {
                &input[row0 * width * cin..][..pixels * cin]
            } else {
                unrolled = im2col(input, width, height, cin, k, row0, pixels / width);
                &unrolled
            };
            gemm(
                pixels,
                depth,
                cout,
                col,
                (depth, 1),
                &stage.weight,
                (cout, 1),
                1.0,
                out_block,
            );
        });
    out
}

/// Accumulates weight/bias gradients and returns the gradient with respect
/// to the stage input (when requested).
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    width: usize,
    height: usize,
    stage: &ConvStage,
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let (cin, cout, k) = (stage.in_ch, stage.out_ch, stage.kernel);
    let half = (k / 2) as isize;
    let depth = k * k * cin;
    let mut grad_in = want_input_grad.then(|| vec![0.0; width * height * cin]);
    for px in grad_out.chunks_exact(cout) {
        for (b, &g) in grad_bias.iter_mut().zip(px) {
            *b += g;
        }
    }
    for row0 in (0..height).step_by(ROW_BLOCK) {
        let rows = ROW_BLOCK.min(height - row0);
        let pixels = rows * width;
        let g = &grad_out[row0 * width * cout..][..pixels * cout];
        let unrolled;
        let col: &[f64] = if k == 1 {
            &input[row0 * width * cin..][..pixels * cin]
        } else {
            unrolled = im2col(input, width, height, cin, k, row0, rows);
            &unrolled
        };
        // dW += col^T * g
        gemm(
            depth,
            pixels,
            cout,
            col,
            (1, depth),
            g,
            (cout, 1),
            1.0,
            grad_weight,
        );
        if let Some(gi) = grad_in.as_mut() {
            // dcol = g * W^T, then scatter back through the padding
            let mut dcol = vec![0.0; pixels * depth];
            gemm(
                pixels,
                cout,
                depth,
                g,
                (cout, 1),
                &stage.weight,
                (1, cout),
                0.0,
                &mut dcol,
            );
            for dr in 0..rows {
                let row = (row0 + dr) as isize;
                for c in 0..width {
                    let src = &dcol[(dr * width + c) * depth..][..depth];
                    for ki in 0..k {
                        let r = (row + ki as isize - half).clamp(0, height as isize - 1) as usize;
                        for kj in 0..k {
                            let cc = (c as isize + kj as isize - half).clamp(0, width as isize - 1)
                                as usize;
                            let tap = ki * k + kj;
                            let dst = &mut gi[(r * width + cc) * cin..][..cin];
                            for (d, s) in dst.iter_mut().zip(&src[tap * cin..(tap + 1) * cin]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

fn softmax_rows(logits: &mut [f64], taps: usize) {
    logits.par_chunks_mut(taps).for_each(|row| {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    });
}

/// Everything the backward pass needs from a forward pass.
struct ForwardCache {
    /// Post-`tanh` activation of every hidden stage.
    activations: Vec<Vec<f64>>,
    /// Softmax weights, `[pixel][tap]`.
    kernels: Vec<f64>,
    /// Filter output before clamping.
    raw_output: Vec<f64>,
}

fn check_input(model: &KpnModel, img: &ImageBuffer) -> Result<()> {
    if img.channels() != model.arch.in_channels {
        return Err(Error::Shape(format!(
            "model expects {} channels, image has {}",
            model.arch.in_channels,
            img.channels()
        )));
    }
    Ok(())
}

fn forward_cached(model: &KpnModel, img: &ImageBuffer) -> ForwardCache {
    let (w, h) = (img.width(), img.height());
    let n_hidden = model.stages.len() - 1;
    let mut activations = Vec::with_capacity(n_hidden);
    for stage in &model.stages[..n_hidden] {
        let input = activations.last().map(Vec::as_slice).unwrap_or(img.data());
        let mut z = conv_forward(input, w, h, stage);
        z.par_iter_mut().for_each(|v| *v = v.tanh());
        activations.push(z);
    }
    let head_in = activations.last().map(Vec::as_slice).unwrap_or(img.data());
    let mut kernels = conv_forward(head_in, w, h, model.head());
    softmax_rows(&mut kernels, model.arch.taps());
    let field = KernelField::from_raw(w, h, model.arch.levels, model.arch.ksize, kernels, true);
    let raw_output = kernel_filter::filter_unclamped(img, &field, &model.arch.scheme());
    let kernels = field.into_weights();
    ForwardCache {
        activations,
        kernels,
        raw_output,
    }
}

/// Predicted kernels and the filtered image.
#[derive(Debug, Clone)]
pub struct KpnOutput {
    pub field: KernelField,
    pub restored: ImageBuffer,
}

/// Predicts a normalized kernel field for `img` and filters `img` with it.
pub fn kpn_forward(model: &KpnModel, img: &ImageBuffer) -> Result<KpnOutput> {
    check_input(model, img)?;
    let cache = forward_cached(model, img);
    let restored: Vec<f64> = cache.raw_output.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let (w, h) = (img.width(), img.height());
    let field = KernelField::from_raw(
        w,
        h,
        model.arch.levels,
        model.arch.ksize,
        cache.kernels,
        true,
    );
    let restored = ImageBuffer::new(w, h, img.channels(), restored)?;
    Ok(KpnOutput { field, restored })
}

#[derive(Debug, Clone)]
pub struct DlkpnOutput {
    /// First-layer reconstruction.
    pub mid: ImageBuffer,
    /// Second layer applied to `mid`.
    pub restored: ImageBuffer,
}

pub fn dlkpn_infer(model: &DlkpnModel, img: &ImageBuffer) -> Result<DlkpnOutput> {
    let mid = kpn_forward(&model.layer1, img)?.restored;
    let restored = kpn_forward(&model.layer2, &mid)?.restored;
    Ok(DlkpnOutput { mid, restored })
}

/// Mean absolute difference over all samples.
pub fn loss_l1(pred: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    pred.ensure_same_shape(target, "loss_l1")?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / pred.data().len() as f64)
}

/// L1 loss of `kpn_forward(model, img)` against `target` and its exact
/// parameter gradients. The output clamp is passed through unchanged and
/// the sub-gradient of `|x|` at zero is taken as zero.
pub fn loss_and_gradients(
    model: &KpnModel,
    img: &ImageBuffer,
    target: &ImageBuffer,
) -> Result<(f64, Gradients)> {
    check_input(model, img)?;
    img.ensure_same_shape(target, "backward")?;
    let (w, h) = (img.width(), img.height());
    let cache = forward_cached(model, img);
    let n = cache.raw_output.len() as f64;

    let mut loss = 0.0;
    let grad_out: Vec<f64> = cache
        .raw_output
        .iter()
        .zip(target.data())
        .map(|(&raw, &t)| {
            let diff = raw.clamp(0.0, 1.0) - t;
            loss += diff.abs();
            if diff > 0.0 {
                1.0 / n
            } else if diff < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    loss /= n;

    let (levels, ksize, taps) = (model.arch.levels, model.arch.ksize, model.arch.taps());
    let grad_kernels =
        kernel_filter::weight_gradients(img, levels, ksize, &model.arch.scheme(), &grad_out);

    // softmax: dz_k = w_k * (dw_k - sum_m w_m dw_m)
    let mut grad_logits = grad_kernels;
    grad_logits
        .par_chunks_mut(taps)
        .zip(cache.kernels.par_chunks(taps))
        .for_each(|(g, wk)| {
            let inner: f64 = g.iter().zip(wk).map(|(a, b)| a * b).sum();
            for (gv, &wv) in g.iter_mut().zip(wk) {
                *gv = wv * (*gv - inner);
            }
        });

    let mut grads = Gradients::zeros_like(model);
    let n_hidden = model.stages.len() - 1;
    let mut grad = grad_logits;
    for s in (0..=n_hidden).rev() {
        let input = if s == 0 {
            img.data()
        } else {
            cache.activations[s - 1].as_slice()
        };
        let grad_in = conv_backward(
            input,
            w,
            h,
            &model.stages[s],
            &grad,
            &mut grads.weight[s],
            &mut grads.bias[s],
            s > 0,
        );
        if let Some(mut gi) = grad_in {
            // through tanh of the previous stage
            for (g, a) in gi.iter_mut().zip(&cache.activations[s - 1]) {
                *g *= 1.0 - a * a;
            }
            grad = gi;
        }
    }
    Ok((loss, grads))
}

/// Gradients of the L1 loss of one layer with respect to every parameter.
pub fn backward(model: &KpnModel, img: &ImageBuffer, target: &ImageBuffer) -> Result<Gradients> {
    loss_and_gradients(model, img, target).map(|(_, g)| g)
}
