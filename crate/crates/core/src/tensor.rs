//! Dense NCHW tensors of `f64` and a seeded, portable random source.
//!
//! Every tensor is rank 4 with row-major `(batch, channels, height, width)`
//! layout. Matrices are carried as `(1, 1, rows, cols)` tensors, and batched
//! matrix products treat the leading two axes as batch axes.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Shape = [usize; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::invalid(
                "from_vec",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; numel(shape)],
            requires_grad: false,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    /// A `(1, 1, rows, cols)` matrix from row slices.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("matrix", "ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec([1, 1, rows.len(), cols], data)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..numel(shape)).map(|_| rng.uniform_range(lo, hi)).collect();
        Self {
            shape,
            data,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cc, hh, ww] = self.shape;
        ((n * cc + c) * hh + h) * ww + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Slice out batch item `n` as a `(1, C, H, W)` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        let len = c * h * w;
        Tensor {
            shape: [1, c, h, w],
            data: self.data[n * len..(n + 1) * len].to_vec(),
            requires_grad: false,
        }
    }

    /// Stack `(1, C, H, W)` items (or any equal-shape tensors) along batch.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::invalid("stack", "no tensors"))?;
        let [n0, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: first.shape,
                    right: t.shape,
                });
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec([n0 * items.len(), c, h, w], data)
    }
}

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

/// True when every axis of `b` equals the matching axis of `a` or is 1.
pub fn broadcastable(a: Shape, b: Shape) -> bool {
    a.iter().zip(b.iter()).all(|(&x, &y)| x == y || y == 1)
}

/// Flat index into `b` for output coordinate `(n, c, h, w)` of shape `a`
/// when `b` broadcasts over its size-1 axes.
#[inline]
pub(crate) fn broadcast_index(b: Shape, n: usize, c: usize, h: usize, w: usize) -> usize {
    let n = if b[0] == 1 { 0 } else { n };
    let c = if b[1] == 1 { 0 } else { c };
    let h = if b[2] == 1 { 0 } else { h };
    let w = if b[3] == 1 { 0 } else { w };
    ((n * b[1] + c) * b[2] + h) * b[3] + w
}

pub fn elementwise(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| op.apply(x, y)).collect();
        return Tensor::from_vec(a.shape, data);
    }
    if !broadcastable(a.shape, b.shape) {
        return Err(Error::ShapeMismatch {
            op: "elementwise",
            left: a.shape,
            right: b.shape,
        });
    }
    let [nn, cc, hh, ww] = a.shape;
    let mut data = Vec::with_capacity(a.numel());
    let mut i = 0;
    for n in 0..nn {
        for c in 0..cc {
            for h in 0..hh {
                for w in 0..ww {
                    let y = b.data[broadcast_index(b.shape, n, c, h, w)];
                    data.push(op.apply(a.data[i], y));
                    i += 1;
                }
            }
        }
    }
    Tensor::from_vec(a.shape, data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(BinaryOp::Add, a, b)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(BinaryOp::Sub, a, b)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(BinaryOp::Mul, a, b)
}

/// Sum `grad` (shaped like the broadcast output) back onto shape `target`.
pub(crate) fn reduce_to_shape(grad: &Tensor, target: Shape) -> Tensor {
    if grad.shape == target {
        return grad.clone();
    }
    let mut out = Tensor::zeros(target);
    let [nn, cc, hh, ww] = grad.shape;
    let mut i = 0;
    for n in 0..nn {
        for c in 0..cc {
            for h in 0..hh {
                for w in 0..ww {
                    out.data[broadcast_index(target, n, c, h, w)] += grad.data[i];
                    i += 1;
                }
            }
        }
    }
    out
}

/// Concatenate along the channel axis; blocks appear in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no parts"))?;
    let [n, _, h, w] = first.shape;
    let mut c_total = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.shape;
        if pn != n || ph != h || pw != w {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first.shape,
                right: p.shape,
            });
        }
        c_total += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * c_total * plane);
    for b in 0..n {
        for p in parts {
            let len = p.shape[1] * plane;
            data.extend_from_slice(&p.data[b * len..(b + 1) * len]);
        }
    }
    Tensor::from_vec([n, c_total, h, w], data)
}

/// Split a channel-concatenated tensor back into blocks of the given widths.
pub(crate) fn split_channels(x: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let [n, c, h, w] = x.shape;
    debug_assert_eq!(widths.iter().sum::<usize>(), c);
    let plane = h * w;
    let mut outs: Vec<Vec<f64>> = widths.iter().map(|&wc| Vec::with_capacity(n * wc * plane)).collect();
    for b in 0..n {
        let mut off = b * c * plane;
        for (k, &wc) in widths.iter().enumerate() {
            outs[k].extend_from_slice(&x.data[off..off + wc * plane]);
            off += wc * plane;
        }
    }
    outs.into_iter()
        .zip(widths)
        .map(|(d, &wc)| Tensor {
            shape: [n, wc, h, w],
            data: d,
            requires_grad: false,
        })
        .collect()
}

/// Batched matrix product over the last two axes.
///
/// `a` is `(N, C, m, k)` and `b` is `(N, C, k, n)`. Each output entry is
/// accumulated left to right over the inner index.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [an, ac, m, k] = a.shape;
    let [bn, bc, k2, n] = b.shape;
    if an != bn || ac != bc || k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape,
            right: b.shape,
        });
    }
    let mut out = Tensor::zeros([an, ac, m, n]);
    for batch in 0..an * ac {
        gemm_nn(
            m,
            n,
            k,
            &a.data[batch * m * k..(batch + 1) * m * k],
            &b.data[batch * k * n..(batch + 1) * k * n],
            &mut out.data[batch * m * n..(batch + 1) * m * n],
        );
    }
    Ok(out)
}

/// Swap the last two axes.
pub fn transpose_last2(a: &Tensor) -> Tensor {
    let [n, c, h, w] = a.shape;
    let mut out = Tensor::zeros([n, c, w, h]);
    for b in 0..n * c {
        let src = &a.data[b * h * w..(b + 1) * h * w];
        let dst = &mut out.data[b * h * w..(b + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                dst[j * h + i] = src[i * w + j];
            }
        }
    }
    out
}

/// Metadata-only reshape; flat order is preserved.
pub fn reshape(x: &Tensor, new_shape: Shape) -> Result<Tensor> {
    if numel(new_shape) != x.numel() {
        return Err(Error::invalid(
            "reshape",
            format!("cannot reshape {:?} into {:?}", x.shape, new_shape),
        ));
    }
    Ok(Tensor {
        shape: new_shape,
        data: x.data.clone(),
        requires_grad: x.requires_grad,
    })
}

// c (m×n) += a (m×k) · b (k×n)
pub(crate) fn gemm_nn(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

// c (m×n) += aᵀ · b where a is stored (k×m) and b is (k×n)
pub(crate) fn gemm_tn(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aki * bv;
            }
        }
    }
}

// c (m×n) += a · bᵀ where a is (m×k) and b is stored (n×k)
pub(crate) fn gemm_nt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = x.len() / 4;
    for i in 0..chunks {
        let o = i * 4;
        acc[0] += x[o] * y[o];
        acc[1] += x[o + 1] * y[o + 1];
        acc[2] += x[o + 2] * y[o + 2];
        acc[3] += x[o + 3] * y[o + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..x.len() {
        s += x[i] * y[i];
    }
    s
}

/// Seeded random source backed by ChaCha8, which produces the same stream
/// on every platform for a given seed.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen::<u64>()
    }

    /// Derive an independent stream, e.g. per sample index.
    pub fn derive(seed: u64, index: u64) -> Self {
        Self::new(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
