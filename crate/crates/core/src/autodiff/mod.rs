//! Reverse-mode differentiation over tensor operations.
//!
//! A [`Tape`] records every operation as a node holding its forward value
//! and whatever the adjoint needs. Nodes are appended in evaluation order,
//! so the node list is already topologically sorted and [`Tape::backward`]
//! walks it once in reverse.
//!
//! ```
//! use cirnet::autodiff::Tape;
//! use cirnet::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.variable(Tensor::from_vec([1, 1, 1, 3], vec![1.0, -2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

mod gradcheck;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};

use crate::error::{Error, Result};
use crate::nn_ops::{self, ResizeMode};
use crate::tensor::{self, BinaryOp, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryOp, Var, Var),
    Affine(Var, f64),
    Concat(Vec<Var>),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        scale: Vec<f64>,
    },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    GlobalAvgPool(Var),
    ChannelMean(Var),
    ChannelMax(Var, Vec<usize>),
    Resize(Var, ResizeMode),
    Sum(Var),
    Mean(Var),
    Bce(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    branch_hash: u64,
}

/// Gradient buffers keyed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            branch_hash: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every branch decision taken so far (ReLU signs, channel
    /// arg-max, loss clamping). Two evaluations with equal signatures lie on
    /// the same smooth piece of a piecewise-smooth function.
    pub fn branch_signature(&self) -> u64 {
        self.branch_hash
    }

    fn mix(&mut self, bits: impl Iterator<Item = u64>) {
        let mut h = self.branch_hash;
        for b in bits {
            h ^= b;
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.branch_hash = h;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let value = value.with_requires_grad(requires_grad);
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let value = tensor::elementwise(op, self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Binary(op, a, b), rg))
    }

    /// `a + b`; `b` may broadcast over size-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|v| scale * v + shift);
        let rg = self.rg(&[a]);
        self.push(value, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = tensor::concat_channels(&tensors)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = tensor::transpose_last2(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var> {
        let value = tensor::reshape(self.value(a), shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let value = nn_ops::conv2d(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut deps = vec![x, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let f = nn_ops::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let stats = BatchStats {
            mean: f.batch_mean,
            var_unbiased: f.batch_var_unbiased,
        };
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            f.output,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                normalized: f.normalized,
                inv_std: f.inv_std,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// Inference-mode batch norm; running statistics are treated as constants.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Tensor,
        var: &Tensor,
        eps: f64,
    ) -> Result<Var> {
        let value = nn_ops::batch_norm_eval(self.value(x), self.value(gamma), self.value(beta), mean, var, eps)?;
        let scale = var.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: mean.data().to_vec(),
                scale,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = nn_ops::relu(self.value(a));
        let bits: Vec<u64> = self.value(a).data().iter().map(|&v| (v > 0.0) as u64).collect();
        self.mix(bits.into_iter());
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = nn_ops::sigmoid(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = nn_ops::softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let value = nn_ops::global_avg_pool(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::GlobalAvgPool(a), rg)
    }

    pub fn channel_mean(&mut self, a: Var) -> Var {
        let value = nn_ops::channel_mean(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::ChannelMean(a), rg)
    }

    pub fn channel_max(&mut self, a: Var) -> Var {
        let (value, arg) = nn_ops::channel_max(self.value(a));
        self.mix(arg.iter().map(|&i| i as u64));
        let rg = self.rg(&[a]);
        self.push(value, Op::ChannelMax(a, arg), rg)
    }

    pub fn resize(&mut self, a: Var, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Var> {
        let value = nn_ops::resize(self.value(a), out_h, out_w, mode)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Resize(a, mode), rg))
    }

    /// Bilinear upsampling to `(h, w)`; a no-op when sizes already match.
    pub fn upsample_to(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let [_, _, ah, aw] = self.shape(a);
        if ah == h && aw == w {
            return Ok(a);
        }
        self.resize(a, h, w, ResizeMode::BilinearUp)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Mean binary cross-entropy of predictions `s` against fixed targets.
    pub fn bce(&mut self, s: Var, target: &Tensor) -> Result<Var> {
        let loss = nn_ops::bce_mean(self.value(s), target)?;
        let lo = nn_ops::BCE_CLAMP;
        let bits: Vec<u64> = self
            .value(s)
            .data()
            .iter()
            .map(|&v| (v < lo) as u64 | (((v > 1.0 - lo) as u64) << 1))
            .collect();
        self.mix(bits.into_iter());
        let rg = self.rg(&[s]);
        Ok(self.push(Tensor::scalar(loss), Op::Bce(s, target.clone()), rg))
    }

    /// Propagate d(loss)/d(node) to every node that requires a gradient.
    ///
    /// Every reachable differentiable leaf receives a buffer of its own
    /// shape, zero-filled when no path carries gradient to it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape()));
        }
        if !loss_node.requires_grad {
            return Err(Error::DetachedGraph);
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut reachable = vec![false; self.nodes.len()];
        reachable[loss.0] = true;
        grads[loss.0] = Some(Tensor::full(loss_node.value.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            if !reachable[id] || !self.nodes[id].requires_grad {
                continue;
            }
            let node = &self.nodes[id];
            for dep in self.inputs(&node.op) {
                reachable[dep.0] = true;
            }
            if matches!(node.op, Op::Leaf) {
                if grads[id].is_none() {
                    grads[id] = Some(Tensor::zeros(node.value.shape()));
                }
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Binary(_, a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
            Op::Conv2d { x, weight, bias, .. } => {
                let mut v = vec![*x, *weight];
                v.extend(*bias);
                v
            }
            Op::BatchNormTrain { x, gamma, beta, .. } | Op::BatchNormEval { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::Affine(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::GlobalAvgPool(a)
            | Op::ChannelMean(a)
            | Op::ChannelMax(a, _)
            | Op::Resize(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Bce(a, _) => vec![*a],
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Binary(op, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let bshape = bv.shape();
                match op {
                    BinaryOp::Add => {
                        self.accumulate(grads, *a, g.clone());
                        self.accumulate(grads, *b, tensor::reduce_to_shape(g, bshape));
                    }
                    BinaryOp::Sub => {
                        self.accumulate(grads, *a, g.clone());
                        self.accumulate(grads, *b, tensor::reduce_to_shape(g, bshape).scale(-1.0));
                    }
                    BinaryOp::Mul => {
                        if self.requires_grad(*a) {
                            self.accumulate(grads, *a, tensor::mul(g, bv)?);
                        }
                        if self.requires_grad(*b) {
                            let gb = tensor::mul(g, av)?;
                            self.accumulate(grads, *b, tensor::reduce_to_shape(&gb, bshape));
                        }
                    }
                }
            }
            Op::Affine(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| self.shape(*p)[1]).collect();
                for (p, piece) in parts.iter().zip(tensor::split_channels(g, &widths)) {
                    self.accumulate(grads, *p, piece);
                }
            }
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let bt = tensor::transpose_last2(self.value(*b));
                    self.accumulate(grads, *a, tensor::matmul(g, &bt)?);
                }
                if self.requires_grad(*b) {
                    let at = tensor::transpose_last2(self.value(*a));
                    self.accumulate(grads, *b, tensor::matmul(&at, g)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, tensor::transpose_last2(g)),
            Op::Reshape(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, tensor::reshape(g, shape)?);
            }
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
                pad,
            } => {
                let (dx, dw, db) = nn_ops::conv2d_backward(self.value(*x), self.value(*weight), g, *stride, *pad)?;
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *weight, dw);
                if let Some(b) = bias {
                    let shape = self.shape(*b);
                    self.accumulate(grads, *b, tensor::reshape(&db, shape)?);
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (dx, dgamma, dbeta) = nn_ops::batch_norm_train_backward(g, normalized, inv_std, self.value(*gamma));
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                scale,
            } => {
                let gam = self.value(*gamma);
                let xv = self.value(*x);
                let [n, c, h, w] = g.shape();
                let plane = h * w;
                let mut dx = Tensor::zeros(g.shape());
                let mut dgamma = Tensor::zeros(gam.shape());
                let mut dbeta = Tensor::zeros(gam.shape());
                for b in 0..n {
                    for ch in 0..c {
                        let k = gam.data()[ch] * scale[ch];
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            let gv = g.data()[i];
                            dx.data_mut()[i] = gv * k;
                            dbeta.data_mut()[ch] += gv;
                            dgamma.data_mut()[ch] += gv * (xv.data()[i] - mean[ch]) * scale[ch];
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(av.shape(), d)?);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.shape(), d)?);
            }
            Op::SoftmaxRows(a) => {
                self.accumulate(grads, *a, nn_ops::softmax_rows_backward(&node.value, g));
            }
            Op::GlobalAvgPool(a) => {
                let [n, c, h, w] = self.shape(*a);
                let plane = (h * w) as f64;
                let mut d = Tensor::zeros([n, c, h, w]);
                for (chunk, &gv) in d.data_mut().chunks_mut(h * w).zip(g.data()) {
                    chunk.iter_mut().for_each(|v| *v = gv / plane);
                }
                self.accumulate(grads, *a, d);
            }
            Op::ChannelMean(a) => {
                let [n, c, h, w] = self.shape(*a);
                let plane = h * w;
                let mut d = Tensor::zeros([n, c, h, w]);
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for i in 0..plane {
                            d.data_mut()[off + i] = g.data()[b * plane + i] / c as f64;
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ChannelMax(a, arg) => {
                let [n, c, h, w] = self.shape(*a);
                let plane = h * w;
                let mut d = Tensor::zeros([n, c, h, w]);
                for b in 0..n {
                    for i in 0..plane {
                        let ch = arg[b * plane + i];
                        d.data_mut()[(b * c + ch) * plane + i] = g.data()[b * plane + i];
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Resize(a, mode) => {
                let [_, _, h, w] = self.shape(*a);
                let d = match mode {
                    ResizeMode::BilinearUp => nn_ops::bilinear_resize_backward(g, h, w),
                    ResizeMode::AvgPoolDown => nn_ops::avg_pool_down_backward(g, h, w),
                };
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, Tensor::full(shape, g.data()[0]));
            }
            Op::Mean(a) => {
                let shape = self.shape(*a);
                let n = tensor::numel(shape) as f64;
                self.accumulate(grads, *a, Tensor::full(shape, g.data()[0] / n));
            }
            Op::Bce(s, target) => {
                let sv = self.value(*s);
                let n = sv.numel() as f64;
                let lo = nn_ops::BCE_CLAMP;
                let scale = g.data()[0] / n;
                let d = sv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        if p < lo || p > 1.0 - lo {
                            0.0
                        } else {
                            scale * ((1.0 - t) / (1.0 - p) - t / p)
                        }
                    })
                    .collect();
                self.accumulate(grads, *s, Tensor::from_vec(sv.shape(), d)?);
            }
        }
        Ok(())
    }
}
