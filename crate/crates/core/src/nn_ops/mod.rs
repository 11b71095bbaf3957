//! Neural primitives as pure functions on [`Tensor`]s.
//!
//! These are the forward kernels (and hand-written adjoints) that the tape in
//! [`crate::autodiff`] records. Layer types that own parameters live in
//! [`layers`].

pub mod layers;

pub use layers::{Activation, ConvBnRelu, ConvSpec};

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    /// Bilinear interpolation, align-corners-false; output must not shrink.
    BilinearUp,
    /// Mean over disjoint blocks; input must be divisible by output.
    AvgPoolDown,
}

pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_geom(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    let [_, cin, h, wd] = x.shape();
    let [_, wcin, kh, kw] = w.shape();
    if wcin != cin {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: x.shape(),
            right: w.shape(),
        });
    }
    if kh != kw {
        return Err(Error::invalid("conv2d", "kernel must be square"));
    }
    let (ho, wo) = match (conv_out_size(h, kh, stride, pad), conv_out_size(wd, kw, stride, pad)) {
        (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
        _ => {
            return Err(Error::invalid(
                "conv2d",
                format!("zero spatial output for input {h}x{wd}, k={kh}, pad={pad}"),
            ))
        }
    };
    Ok(ConvGeom {
        cin,
        h,
        w: wd,
        k: kh,
        stride,
        pad,
        ho,
        wo,
    })
}

// (cin·k·k) × (ho·wo) patch matrix for one batch item
fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) with zero padding and optional bias.
///
/// `x` is `(N, C_in, H, W)`, `weight` is `(C_out, C_in, k, k)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geom(x, weight, stride, pad)?;
    let [n, ..] = x.shape();
    let cout = weight.shape()[0];
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: weight.shape(),
                right: b.shape(),
            });
        }
    }
    let kk = g.cin * g.k * g.k;
    let p = g.ho * g.wo;
    let in_len = g.cin * g.h * g.w;
    let mut out = Tensor::zeros([n, cout, g.ho, g.wo]);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * p]
    };
    for b in 0..n {
        let xb = &x.data()[b * in_len..(b + 1) * in_len];
        let ob = &mut out.data_mut()[b * cout * p..(b + 1) * cout * p];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias.data()[co]);
            }
        }
        let cols: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut col);
            &col
        };
        gemm_nn(cout, p, kk, weight.data(), cols, ob);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = conv_geom(x, weight, stride, pad)?;
    let [n, ..] = x.shape();
    let cout = weight.shape()[0];
    let kk = g.cin * g.k * g.k;
    let p = g.ho * g.wo;
    let in_len = g.cin * g.h * g.w;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros([1, cout, 1, 1]);
    let mut col = vec![0.0; kk * p];
    let mut dcol = vec![0.0; kk * p];
    for b in 0..n {
        let xb = &x.data()[b * in_len..(b + 1) * in_len];
        let gb = &grad_out.data()[b * cout * p..(b + 1) * cout * p];
        for (co, chunk) in gb.chunks(p).enumerate() {
            db.data_mut()[co] += chunk.iter().sum::<f64>();
        }
        if g.is_pointwise() {
            gemm_nt(cout, kk, p, gb, xb, dw.data_mut());
            let dxb = &mut dx.data_mut()[b * in_len..(b + 1) * in_len];
            gemm_tn(kk, p, cout, weight.data(), gb, dxb);
        } else {
            im2col(xb, &g, &mut col);
            gemm_nt(cout, kk, p, gb, &col, dw.data_mut());
            dcol.iter_mut().for_each(|v| *v = 0.0);
            gemm_tn(kk, p, cout, weight.data(), gb, &mut dcol);
            col2im(&dcol, &g, &mut dx.data_mut()[b * in_len..(b + 1) * in_len]);
        }
    }
    Ok((dx, dw, db))
}

/// Batch statistics forward pass; returns the output plus what the
/// backward pass and the running-stat update need.
pub struct BatchNormForward {
    pub output: Tensor,
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Unbiased variance, used for the running estimate.
    pub batch_var_unbiased: Vec<f64>,
}

pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<BatchNormForward> {
    let [n, c, h, w] = x.shape();
    check_per_channel("batch_norm", x, gamma)?;
    check_per_channel("batch_norm", x, beta)?;
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            s += x.data()[off..off + plane].iter().sum::<f64>();
        }
        mean[ch] = s / m;
        let mut v = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            v += x.data()[off..off + plane]
                .iter()
                .map(|&t| (t - mean[ch]) * (t - mean[ch]))
                .sum::<f64>();
        }
        var[ch] = v / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(x.shape());
    let mut output = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                normalized.data_mut()[i] = xh;
                output.data_mut()[i] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
    }
    let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
    Ok(BatchNormForward {
        output,
        normalized,
        inv_std,
        batch_mean: mean,
        batch_var_unbiased: var.iter().map(|v| v * unbiased).collect(),
    })
}

/// Adjoint of [`batch_norm_train`]: returns (dx, dgamma, dbeta).
pub fn batch_norm_train_backward(
    grad_out: &Tensor,
    normalized: &Tensor,
    inv_std: &[f64],
    gamma: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = grad_out.shape();
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut dgamma = Tensor::zeros(gamma.shape());
    let mut dbeta = Tensor::zeros(gamma.shape());
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                sum_dy += grad_out.data()[i];
                sum_dy_xh += grad_out.data()[i] * normalized.data()[i];
            }
        }
        dgamma.data_mut()[ch] = sum_dy_xh;
        dbeta.data_mut()[ch] = sum_dy;
        let k = gamma.data()[ch] * inv_std[ch] / m;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                dx.data_mut()[i] = k * (m * grad_out.data()[i] - sum_dy - normalized.data()[i] * sum_dy_xh);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Per-channel affine map with running statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    for p in [gamma, beta, mean, var] {
        check_per_channel("batch_norm", x, p)?;
    }
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma.data()[ch] / (var.data()[ch] + eps).sqrt();
            let shift = beta.data()[ch] - mean.data()[ch] * scale;
            let off = (b * c + ch) * plane;
            for v in &mut out.data_mut()[off..off + plane] {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

fn check_per_channel(op: &'static str, x: &Tensor, p: &Tensor) -> Result<()> {
    if p.numel() != x.shape()[1] {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape(),
            right: p.shape(),
        });
    }
    Ok(())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Softmax over the last axis with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let w = x.shape()[3];
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(w) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub fn softmax_rows_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let w = y.shape()[3];
    let mut dx = Tensor::zeros(y.shape());
    for ((yr, gr), dr) in y
        .data()
        .chunks(w)
        .zip(grad_out.data().chunks(w))
        .zip(dx.data_mut().chunks_mut(w))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for i in 0..w {
            dr[i] = yr[i] * (gr[i] - dot);
        }
    }
    dx
}

pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data).expect("pool shape")
}

/// Mean over channels: `(N, C, H, W) -> (N, 1, H, W)`.
pub fn channel_mean(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = Tensor::zeros([n, 1, h, w]);
    for b in 0..n {
        let dst = &mut out.data_mut()[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for (d, s) in dst.iter_mut().zip(&x.data()[off..off + plane]) {
                *d += s;
            }
        }
        dst.iter_mut().for_each(|v| *v /= c as f64);
    }
    out
}

/// Max over channels and the (first) arg-max channel per pixel.
pub fn channel_max(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = Tensor::full([n, 1, h, w], f64::NEG_INFINITY);
    let mut arg = vec![0usize; n * plane];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in 0..plane {
                let v = x.data()[off + i];
                if v > out.data()[b * plane + i] {
                    out.data_mut()[b * plane + i] = v;
                    arg[b * plane + i] = ch;
                }
            }
        }
    }
    (out, arg)
}

/// Per-axis bilinear sampling table (align-corners-false).
#[derive(Clone, Debug)]
pub(crate) struct AxisInterp {
    pub i0: Vec<usize>,
    pub i1: Vec<usize>,
    pub frac: Vec<f64>,
}

pub(crate) fn axis_interp(input: usize, output: usize) -> AxisInterp {
    let scale = input as f64 / output as f64;
    let mut t = AxisInterp {
        i0: Vec::with_capacity(output),
        i1: Vec::with_capacity(output),
        frac: Vec::with_capacity(output),
    };
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = if i0 + 1 < input { i0 + 1 } else { i0 };
        t.i0.push(i0);
        t.i1.push(i1);
        t.frac.push(src - i0 as f64);
    }
    t
}

/// Bilinear resampling to any size, align-corners-false.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    if h == out_h && w == out_w {
        return x.clone();
    }
    let ty = axis_interp(h, out_h);
    let tx = axis_interp(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(out_h * out_w)) {
        for oy in 0..out_h {
            let (y0, y1, fy) = (ty.i0[oy], ty.i1[oy], ty.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (tx.i0[ox], tx.i1[ox], tx.frac[ox]);
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn bilinear_resize_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let [n, c, out_h, out_w] = grad_out.shape();
    if in_h == out_h && in_w == out_w {
        return grad_out.clone();
    }
    let ty = axis_interp(in_h, out_h);
    let tx = axis_interp(in_w, out_w);
    let mut dx = Tensor::zeros([n, c, in_h, in_w]);
    for (g, dst) in grad_out
        .data()
        .chunks(out_h * out_w)
        .zip(dx.data_mut().chunks_mut(in_h * in_w))
    {
        for oy in 0..out_h {
            let (y0, y1, fy) = (ty.i0[oy], ty.i1[oy], ty.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (tx.i0[ox], tx.i1[ox], tx.frac[ox]);
                let v = g[oy * out_w + ox];
                dst[y0 * in_w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * in_w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * in_w + x0] += v * fy * (1.0 - fx);
                dst[y1 * in_w + x1] += v * fy * fx;
            }
        }
    }
    dx
}

fn avg_pool_down(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (fh, fw) = (h / out_h, w / out_w);
    let norm = (fh * fw) as f64;
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(out_h * out_w)) {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut s = 0.0;
                for dy in 0..fh {
                    for dx in 0..fw {
                        s += src[(oy * fh + dy) * w + ox * fw + dx];
                    }
                }
                dst[oy * out_w + ox] = s / norm;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_down_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let [n, c, out_h, out_w] = grad_out.shape();
    let (fh, fw) = (in_h / out_h, in_w / out_w);
    let norm = (fh * fw) as f64;
    let mut dx = Tensor::zeros([n, c, in_h, in_w]);
    for (g, dst) in grad_out
        .data()
        .chunks(out_h * out_w)
        .zip(dx.data_mut().chunks_mut(in_h * in_w))
    {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let v = g[oy * out_w + ox] / norm;
                for dy in 0..fh {
                    for ddx in 0..fw {
                        dst[(oy * fh + dy) * in_w + ox * fw + ddx] = v;
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn check_resize(x: &Tensor, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<()> {
    let [_, _, h, w] = x.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize", "zero output size"));
    }
    match mode {
        ResizeMode::BilinearUp if out_h < h || out_w < w => Err(Error::invalid(
            "resize",
            format!("bilinear_up cannot shrink {h}x{w} to {out_h}x{out_w}"),
        )),
        ResizeMode::AvgPoolDown if out_h > h || out_w > w || h % out_h != 0 || w % out_w != 0 => Err(Error::invalid(
            "resize",
            format!("avgpool_down needs {h}x{w} divisible by {out_h}x{out_w}"),
        )),
        _ => Ok(()),
    }
}

pub fn resize(x: &Tensor, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor> {
    check_resize(x, out_h, out_w, mode)?;
    Ok(match mode {
        ResizeMode::BilinearUp => bilinear_resize(x, out_h, out_w),
        ResizeMode::AvgPoolDown => avg_pool_down(x, out_h, out_w),
    })
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy with predictions clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_mean(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "bce",
            left: pred.shape(),
            right: target.shape(),
        });
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&s, &g)| {
            let s = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(g * s.ln() + (1.0 - g) * (1.0 - s).ln())
        })
        .sum();
    Ok(s / pred.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
        let [n, cin, h, wd] = x.shape();
        let [cout, _, k, _] = w.shape();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros([n, cout, ho, wo]);
        for bn in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = b[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.at(bn, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        out.set(bn, co, oy, ox, s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_all_ones_center_is_45() {
        let x = Tensor::from_vec([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::ones([1, 1, 3, 3]);
        let out = conv2d(&x, &w, Some(&Tensor::zeros([1, 1, 1, 1])), 1, 1).unwrap();
        assert_eq!(out.at(0, 0, 1, 1), 45.0);
        assert_eq!(out.max_abs_diff(&conv_oracle(&x, &w, &[0.0], 1, 1)), 0.0);
    }

    #[test]
    fn conv_matches_oracle_on_random_configs() {
        let mut rng = Rng::new(100);
        for trial in 0..50 {
            let k = if trial % 2 == 0 { 1 } else { 3 };
            let stride = 1 + trial % 4 / 2;
            let pad = (k - 1) / 2;
            let cin = 1 + rng.below(4);
            let cout = 1 + rng.below(4);
            let h = 3 + rng.below(6);
            let w = 3 + rng.below(6);
            let x = Tensor::rand_uniform([2, cin, h, w], -1.0, 1.0, &mut rng);
            let wt = Tensor::rand_uniform([cout, cin, k, k], -1.0, 1.0, &mut rng);
            let b = Tensor::rand_uniform([1, cout, 1, 1], -1.0, 1.0, &mut rng);
            let got = conv2d(&x, &wt, Some(&b), stride, pad).unwrap();
            let want = conv_oracle(&x, &wt, b.data(), stride, pad);
            assert!(got.max_abs_diff(&want) < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros([1, 3, 3, 3]), None, 1, 1).is_err());
        assert!(conv2d(&Tensor::zeros([1, 1, 1, 1]), &Tensor::zeros([1, 1, 3, 3]), None, 1, 0).is_err());
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let x = Tensor::rand_uniform([2, 2, 5, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::rand_uniform([3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let g = Tensor::rand_uniform([2, 3, 3, 3], -1.0, 1.0, &mut rng);
        let (dx, dw, db) = conv2d_backward(&x, &w, &g, 2, 1).unwrap();
        let f = |x: &Tensor, w: &Tensor, b: &Tensor| {
            let y = conv2d(x, w, Some(b), 2, 1).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let b0 = Tensor::zeros([1, 3, 1, 1]);
        let eps = 1e-6;
        for i in 0..x.numel() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let fd = (f(&xp, &w, &b0) - f(&xm, &w, &b0)) / (2.0 * eps);
            assert!((fd - dx.data()[i]).abs() < 1e-7);
        }
        for i in 0..w.numel() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.data_mut()[i] += eps;
            wm.data_mut()[i] -= eps;
            let fd = (f(&x, &wp, &b0) - f(&x, &wm, &b0)) / (2.0 * eps);
            assert!((fd - dw.data()[i]).abs() < 1e-7);
        }
        for co in 0..3 {
            let s: f64 = (0..2)
                .flat_map(|n| (0..9).map(move |p| (n, p)))
                .map(|(n, p)| g.at(n, co, p / 3, p % 3))
                .sum();
            assert!((s - db.data()[co]).abs() < 1e-12);
        }
    }

    #[test]
    fn bn_eval_is_per_channel_affine_and_invertible() {
        let mut rng = Rng::new(4);
        let x = Tensor::rand_uniform([2, 3, 4, 4], -2.0, 2.0, &mut rng);
        let gamma = Tensor::rand_uniform([1, 3, 1, 1], 0.5, 2.0, &mut rng);
        let beta = Tensor::rand_uniform([1, 3, 1, 1], -1.0, 1.0, &mut rng);
        let mean = Tensor::rand_uniform([1, 3, 1, 1], -1.0, 1.0, &mut rng);
        let var = Tensor::rand_uniform([1, 3, 1, 1], 0.1, 2.0, &mut rng);
        let y = batch_norm_eval(&x, &gamma, &beta, &mean, &var, BN_EPS).unwrap();
        let mut back = y.clone();
        for n in 0..2 {
            for c in 0..3 {
                let scale = gamma.data()[c] / (var.data()[c] + BN_EPS).sqrt();
                let shift = beta.data()[c] - mean.data()[c] * scale;
                for h in 0..4 {
                    for w in 0..4 {
                        back.set(n, c, h, w, (y.at(n, c, h, w) - shift) / scale);
                    }
                }
            }
        }
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn bn_train_normalizes() {
        let mut rng = Rng::new(5);
        let x = Tensor::rand_uniform([3, 2, 3, 3], -2.0, 5.0, &mut rng);
        let f = batch_norm_train(&x, &Tensor::ones([1, 2, 1, 1]), &Tensor::zeros([1, 2, 1, 1]), BN_EPS).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| (0..9).map(move |p| (n, p)))
                .map(|(n, p)| f.output.at(n, c, p / 3, p % 3))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::matrix(&[&[0.0, 0.0], &[2f64.ln(), 0.0], &[1000.0, 0.0]]).unwrap();
        let y = softmax_rows(&x);
        assert_eq!(&y.data()[0..2], &[0.5, 0.5]);
        assert!((y.data()[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[3] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(&y.data()[4..6], &[1.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_at_extremes() {
        let mut rng = Rng::new(12);
        let x = Tensor::rand_uniform([2, 3, 7, 11], -1e3, 1e3, &mut rng);
        let y = softmax_rows(&x);
        for row in y.data().chunks(11) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((sigmoid_scalar(2.0) - 0.8807970779778823).abs() < 1e-16);
        for v in [-5.0, -0.3, 0.7, 4.0] {
            assert!((sigmoid_scalar(v) + sigmoid_scalar(-v) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid_scalar(-1000.0), 0.0);
        assert_eq!(sigmoid_scalar(1000.0), 1.0);
    }

    #[test]
    fn global_avg_pool_examples() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[2.5]);
        let perm = Tensor::from_vec([1, 1, 2, 2], vec![4.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(global_avg_pool(&perm).data(), &[2.5]);
        assert_eq!(global_avg_pool(&Tensor::full([1, 2, 3, 3], 0.75)).data(), &[0.75, 0.75]);
    }

    #[test]
    fn resize_constant_maps() {
        let x = Tensor::full([1, 2, 4, 4], 0.3);
        let up = resize(&x, 8, 12, ResizeMode::BilinearUp).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let down = resize(&x, 2, 2, ResizeMode::AvgPoolDown).unwrap();
        assert!(down.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn avgpool_block_means() {
        let mut x = Tensor::zeros([1, 1, 4, 4]);
        for h in 0..4 {
            for w in 0..4 {
                x.set(0, 0, h, w, [[1.0, 2.0], [3.0, 4.0]][h / 2][w / 2]);
            }
        }
        let y = resize(&x, 2, 2, ResizeMode::AvgPoolDown).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bilinear_matches_direct_formula() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let y = resize(&x, 4, 4, ResizeMode::BilinearUp).unwrap();
        // src = (dst + 0.5)/2 - 0.5 clamped at 0; taps at floor/floor+1 clamped to 1
        let coord = |d: usize| ((d as f64 + 0.5) * 0.5 - 0.5).max(0.0);
        for oy in 0..4 {
            for ox in 0..4 {
                let (sy, sx) = (coord(oy), coord(ox));
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(1), (x0 + 1).min(1));
                let (ly, lx) = (sy - y0 as f64, sx - x0 as f64);
                let v = x.at(0, 0, y0, x0) * (1.0 - ly) * (1.0 - lx)
                    + x.at(0, 0, y0, x1) * (1.0 - ly) * lx
                    + x.at(0, 0, y1, x0) * ly * (1.0 - lx)
                    + x.at(0, 0, y1, x1) * ly * lx;
                assert!((y.at(0, 0, oy, ox) - v).abs() < 1e-12);
            }
        }
        assert_eq!(y.at(0, 0, 0, 0), 0.0);
        assert_eq!(y.at(0, 0, 0, 3), 1.0);
    }

    #[test]
    fn resize_errors() {
        let x = Tensor::zeros([1, 1, 4, 4]);
        assert!(resize(&x, 2, 2, ResizeMode::BilinearUp).is_err());
        assert!(resize(&x, 3, 3, ResizeMode::AvgPoolDown).is_err());
    }

    #[test]
    fn bce_values() {
        let half = Tensor::full([1, 1, 4, 4], 0.5);
        let g = Tensor::from_vec([1, 1, 4, 4], (0..16).map(|i| (i % 2) as f64).collect()).unwrap();
        assert!((bce_mean(&half, &g).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bce_mean(&g, &g).unwrap() <= -(1.0 - 1e-7f64).ln() + 1e-18);
    }
}
