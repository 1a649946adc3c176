//! Value-level numerical kernels shared by the tape and the public helpers.

use super::tensor::{ConvKernel1D, Tensor2, Tensor3};
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Valid output range for tap offset `shift` with zero "same" padding.
#[inline]
fn tap_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = if shift < 0 { (-shift) as usize } else { 0 };
    let hi = if shift > 0 {
        len.saturating_sub(shift as usize)
    } else {
        len
    };
    (lo.min(hi), hi)
}

/// `out[o, l] = bias[o] + sum_{c,k} w[o,c,k] * x[c, l + k - half]`, zero outside `[0, len)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward(
    x: &[f64],
    in_channels: usize,
    len: usize,
    w: &[f64],
    out_channels: usize,
    width: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let half = (width / 2) as isize;
    for o in 0..out_channels {
        let row = &mut out[o * len..(o + 1) * len];
        row.fill(bias.map_or(0.0, |b| b[o]));
        for c in 0..in_channels {
            let xr = &x[c * len..(c + 1) * len];
            let taps = &w[(o * in_channels + c) * width..(o * in_channels + c + 1) * width];
            for (k, &wv) in taps.iter().enumerate() {
                let shift = k as isize - half;
                let (lo, hi) = tap_range(len, shift);
                let src = &xr[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                for (dst, &s) in row[lo..hi].iter_mut().zip(src) {
                    *dst += wv * s;
                }
            }
        }
    }
}

/// Dot product with four independent accumulators (fixed order, so still deterministic).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Accumulates input, weight and bias gradients of [`conv_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    in_channels: usize,
    len: usize,
    w: &[f64],
    out_channels: usize,
    width: usize,
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let half = (width / 2) as isize;
    if let Some(db) = db {
        for o in 0..out_channels {
            db[o] += dout[o * len..(o + 1) * len].iter().sum::<f64>();
        }
    }
    if let Some(dw) = dw {
        for o in 0..out_channels {
            let g = &dout[o * len..(o + 1) * len];
            for c in 0..in_channels {
                let xr = &x[c * len..(c + 1) * len];
                for k in 0..width {
                    let shift = k as isize - half;
                    let (lo, hi) = tap_range(len, shift);
                    let src = &xr[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    dw[(o * in_channels + c) * width + k] += dot(&g[lo..hi], src);
                }
            }
        }
    }
    if let Some(dx) = dx {
        for o in 0..out_channels {
            let g = &dout[o * len..(o + 1) * len];
            for c in 0..in_channels {
                let dxr = &mut dx[c * len..(c + 1) * len];
                for k in 0..width {
                    let wv = w[(o * in_channels + c) * width + k];
                    let shift = k as isize - half;
                    let (lo, hi) = tap_range(len, shift);
                    let dst = &mut dxr[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (d, &gv) in dst.iter_mut().zip(&g[lo..hi]) {
                        *d += wv * gv;
                    }
                }
            }
        }
    }
}

/// Same-padded 1D convolution over (channels, positions).
pub fn conv1d(input: &Tensor2, kernel: &ConvKernel1D) -> Result<Tensor2> {
    if input.channels() != kernel.in_channels() {
        return Err(Error::dim(format!(
            "conv1d input has {} channels, kernel expects {}",
            input.channels(),
            kernel.in_channels()
        )));
    }
    let len = input.positions();
    let mut out = vec![0.0; kernel.out_channels() * len];
    conv_forward(
        input.data(),
        kernel.in_channels(),
        len,
        kernel.weights(),
        kernel.out_channels(),
        kernel.width(),
        Some(kernel.bias()),
        &mut out,
    );
    Tensor2::from_vec(kernel.out_channels(), len, out)
}

/// `weights * input + bias` with `weights` given row-major as `rows x input.len()`.
pub fn dense(input: &[f64], weights: &[f64], rows: usize, bias: &[f64]) -> Result<Vec<f64>> {
    let cols = input.len();
    if weights.len() != rows * cols {
        return Err(Error::dim(format!(
            "dense weights length {} is not {rows}x{cols}",
            weights.len()
        )));
    }
    if bias.len() != rows {
        return Err(Error::dim(format!(
            "dense bias length {} does not match {rows} rows",
            bias.len()
        )));
    }
    Ok((0..rows)
        .map(|r| {
            bias[r]
                + weights[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(input)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
        })
        .collect())
}

/// Mean of squared element-wise differences over every entry.
pub fn mse_loss(pred: &Tensor3, target: &Tensor3) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::dim(format!(
            "mse_loss shapes differ: {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    Ok(mse_slices(pred.data(), target.data()))
}

pub(crate) fn mse_slices(pred: &[f64], target: &[f64]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    sum / pred.len() as f64
}
