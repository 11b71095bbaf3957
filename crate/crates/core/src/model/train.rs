use serde::{Deserialize, Serialize};

use super::loss::{joint_loss, LossValues};
use super::net::CirNet;
use crate::autodiff::Tape;
use crate::data::{augment, AugmentConfig, Batch, Sample};
use crate::error::{Error, Result};
use crate::params::{apply_updates, Ctx, ParamKind, ParamStore};
use crate::tensor::{Rng, Tensor};

/// Optimisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Divide the learning rate by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Random flips, quarter turns and multi-scale resizing.
    pub augment: bool,
    pub scales: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            decay_every: 8,
            decay_factor: 5.0,
            batch_size: 8,
            epochs: 10,
            seed: 0,
            augment: true,
            scales: vec![48, 64, 80],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if self.batch_size == 0 || self.decay_every == 0 {
            return bad("batch_size and decay_every must be positive".into());
        }
        if self.decay_factor.is_nan() || self.decay_factor < 1.0 {
            return bad(format!("decay_factor {} must be at least 1", self.decay_factor));
        }
        if self.augment && (self.scales.is_empty() || self.scales.iter().any(|&s| s == 0 || !s.is_multiple_of(16))) {
            return bad("scales must be non-empty multiples of 16".into());
        }
        Ok(())
    }

    /// Step-decayed learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr / self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.entries().iter().map(|e| vec![0.0; e.tensor.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update; `grads[i]` belongs to store entry `i` (buffers ignored).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            if store.entry(id).kind != ParamKind::Weight {
                continue;
            }
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossValues,
}

/// Owns a network and its optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: CirNet,
    pub config: TrainConfig,
    pub adam: Adam,
    pub step: usize,
}

impl Trainer {
    pub fn new(net: CirNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&net.store);
        Ok(Self {
            net,
            config,
            adam,
            step: 0,
        })
    }

    /// Forward, joint loss, backward and one Adam update.
    ///
    /// A zero learning rate leaves the network untouched, BN running
    /// statistics included.
    pub fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<LossValues> {
        let mut tape = Tape::new();
        let (loss, updates, vars) = {
            let mut ctx = Ctx::bind(&mut tape, &self.net.store, true);
            let rgb = ctx.tape.constant(batch.rgb.clone());
            let depth = ctx.tape.constant(batch.depth.clone());
            let s = self.net.forward(&mut ctx, rgb, depth)?;
            let loss = joint_loss(ctx.tape, &s, &batch.gt)?;
            (loss, ctx.take_updates(), ctx.params().to_vec())
        };
        let values = loss.values(&tape);
        if !values.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at step {}: total {}, rgb {}, depth {}, rgbd {}",
                self.step, values.total, values.rgb, values.depth, values.rgbd
            )));
        }
        if lr > 0.0 {
            let mut grads = tape.backward(loss.total)?;
            let per_param: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
            self.adam.step(&mut self.net.store, &per_param, lr);
            apply_updates(&mut self.net.store, updates)?;
        }
        self.step += 1;
        Ok(values)
    }

    /// One pass over `samples` in a seeded order. Each batch draws one
    /// training size from the scale set.
    pub fn train_epoch(
        &mut self,
        samples: &[Sample],
        epoch: usize,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::invalid("train", "no training samples"));
        }
        let lr = self.config.lr_at(epoch);
        let mut rng = Rng::derive(self.config.seed, epoch as u64 + 1);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng.shuffle(&mut order);
        let aug = AugmentConfig {
            scales: self.config.scales.clone(),
            ..AugmentConfig::default()
        };
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let picked: Vec<Sample> = if self.config.augment {
                let size = aug.scales[rng.below(aug.scales.len())];
                chunk
                    .iter()
                    .map(|&i| augment(&samples[i], &aug, size, &mut rng))
                    .collect()
            } else {
                chunk.iter().map(|&i| samples[i].clone()).collect()
            };
            let batch = Batch::from_samples(&picked)?;
            let loss = self.train_step(&batch, lr)?;
            on_step(&StepRecord {
                step: self.step,
                epoch,
                lr,
                loss,
            });
            total += loss.total;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    /// Run every configured epoch; returns the mean loss of each.
    pub fn fit(&mut self, samples: &[Sample], mut on_step: impl FnMut(&StepRecord)) -> Result<Vec<f64>> {
        (0..self.config.epochs)
            .map(|e| self.train_epoch(samples, e, &mut on_step))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SceneSpec};
    use crate::model::ModelConfig;

    fn tiny_batch() -> Batch {
        let spec = SceneSpec {
            size: 16,
            seed: 2,
            ..SceneSpec::default()
        };
        Batch::from_samples(&generate(&spec, 2).unwrap()).unwrap()
    }

    #[test]
    fn lr_schedule_steps_down() {
        let c = TrainConfig {
            lr: 1e-3,
            decay_every: 2,
            ..TrainConfig::default()
        };
        assert_eq!(c.lr_at(0), 1e-3);
        assert_eq!(c.lr_at(1), 1e-3);
        assert!((c.lr_at(2) - 2e-4).abs() < 1e-18);
        assert!((c.lr_at(5) - 1e-3 / 25.0).abs() < 1e-18);
    }

    #[test]
    fn zero_lr_freezes_everything() {
        let net = CirNet::new(ModelConfig::tiny(), 0).unwrap();
        let before = net.store.clone();
        let mut t = Trainer::new(
            net,
            TrainConfig {
                lr: 0.0,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let b = tiny_batch();
        let l = t.train_step(&b, 0.0).unwrap();
        assert!((l.total - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(t.net.store, before);
    }

    #[test]
    fn single_batch_overfits() {
        let net = CirNet::new(ModelConfig::tiny(), 1).unwrap();
        let mut t = Trainer::new(net, TrainConfig::default()).unwrap();
        let b = tiny_batch();
        let first = t.train_step(&b, 1e-2).unwrap().total;
        let mut last = first;
        for _ in 0..49 {
            last = t.train_step(&b, 1e-2).unwrap().total;
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.weight("w", Tensor::from_vec([1, 1, 1, 2], vec![1.0, -1.0]).unwrap());
        let mut adam = Adam::new(&store);
        let g = Tensor::from_vec([1, 1, 1, 2], vec![0.5, -3.0]).unwrap();
        adam.step(&mut store, &[Some(g)], 0.1);
        let p = store.get(id).data();
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn invalid_configs() {
        assert!(TrainConfig {
            lr: -1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            scales: vec![50],
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
