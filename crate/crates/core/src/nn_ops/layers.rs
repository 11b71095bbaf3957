use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{apply_updates, Ctx, ParamId, ParamStore};
use crate::tensor::{Rng, Tensor};

use super::{BN_EPS, BN_MOMENTUM};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Construction recipe for a [`ConvBnRelu`].
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub batch_norm: bool,
    pub activation: Activation,
}

impl ConvSpec {
    /// Same-padded `k×k` convolution, BN and ReLU.
    pub fn cbr(cin: usize, cout: usize, k: usize) -> Self {
        Self {
            cin,
            cout,
            k,
            stride: 1,
            batch_norm: true,
            activation: Activation::Relu,
        }
    }

    /// Bare convolution with bias.
    pub fn plain(cin: usize, cout: usize, k: usize) -> Self {
        Self {
            cin,
            cout,
            k,
            stride: 1,
            batch_norm: false,
            activation: Activation::None,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    /// Learnable plus buffer scalars this layer allocates.
    pub fn param_count(&self) -> usize {
        let conv = self.cout * self.cin * self.k * self.k + self.cout;
        if self.batch_norm {
            conv + 4 * self.cout
        } else {
            conv
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Convolution followed by optional batch norm and activation.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
    pub bn: Option<BatchNormParams>,
    pub eps: f64,
    pub momentum: f64,
}

impl ConvBnRelu {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, spec: ConvSpec) -> Self {
        assert!(spec.k % 2 == 1, "kernel size must be odd");
        let weight = store.fan_in_uniform(format!("{name}.weight"), [spec.cout, spec.cin, spec.k, spec.k], rng);
        let bias = store.weight(format!("{name}.bias"), Tensor::zeros([1, spec.cout, 1, 1]));
        let bn = spec.batch_norm.then(|| BatchNormParams {
            gamma: store.weight(format!("{name}.bn.gamma"), Tensor::ones([1, spec.cout, 1, 1])),
            beta: store.weight(format!("{name}.bn.beta"), Tensor::zeros([1, spec.cout, 1, 1])),
            running_mean: store.buffer(format!("{name}.bn.running_mean"), Tensor::zeros([1, spec.cout, 1, 1])),
            running_var: store.buffer(format!("{name}.bn.running_var"), Tensor::ones([1, spec.cout, 1, 1])),
        });
        Self {
            spec,
            weight,
            bias,
            bn,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn padding(&self) -> usize {
        (self.spec.k - 1) / 2
    }

    /// Zero the kernel and bias (and reset BN to identity-like defaults).
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let cin = ctx.tape.shape(x)[1];
        if cin != self.spec.cin {
            return Err(Error::invalid(
                "conv2d",
                format!("layer expects {} input channels, got {cin}", self.spec.cin),
            ));
        }
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let mut y = ctx.tape.conv2d(x, w, Some(b), self.spec.stride, self.padding())?;
        if let Some(bn) = &self.bn {
            let gamma = ctx.param(bn.gamma);
            let beta = ctx.param(bn.beta);
            if ctx.training {
                let (out, stats) = ctx.tape.batch_norm_train(y, gamma, beta, self.eps)?;
                let m = self.momentum;
                let rm = ctx.value(bn.running_mean);
                let rv = ctx.value(bn.running_var);
                let new_mean: Vec<f64> = rm
                    .data()
                    .iter()
                    .zip(&stats.mean)
                    .map(|(r, b)| (1.0 - m) * r + m * b)
                    .collect();
                let new_var: Vec<f64> = rv
                    .data()
                    .iter()
                    .zip(&stats.var_unbiased)
                    .map(|(r, b)| (1.0 - m) * r + m * b)
                    .collect();
                let shape = rm.shape();
                ctx.push_update(bn.running_mean, Tensor::from_vec(shape, new_mean)?);
                ctx.push_update(bn.running_var, Tensor::from_vec(shape, new_var)?);
                y = out;
            } else {
                let mean = ctx.value(bn.running_mean).clone();
                let var = ctx.value(bn.running_var).clone();
                y = ctx.tape.batch_norm_eval(y, gamma, beta, &mean, &var, self.eps)?;
            }
        }
        Ok(match self.spec.activation {
            Activation::Relu => ctx.tape.relu(y),
            Activation::None => y,
        })
    }

    /// Run the layer on a plain tensor, applying running-statistic updates
    /// to `store` when `training`.
    pub fn apply(&self, store: &mut ParamStore, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (out, updates) = {
            let mut ctx = Ctx::bind(&mut tape, store, training);
            let xv = ctx.tape.constant(x.clone());
            let y = self.forward(&mut ctx, xv)?;
            let updates = ctx.take_updates();
            (ctx.tape.value(y).clone(), updates)
        };
        apply_updates(store, updates)?;
        Ok(out)
    }
}
