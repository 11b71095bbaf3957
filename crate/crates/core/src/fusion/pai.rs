use serde::{Deserialize, Serialize};

use super::resize_to;
use crate::attention::SpatialAttention;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn_ops::{ConvBnRelu, ConvSpec};
use crate::params::{Ctx, ParamStore};
use crate::tensor::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaiMode {
    /// Attention-guided residual integration from level 3 upward.
    #[default]
    On,
    /// Per-level concat-conv only.
    Off,
}

/// Fuses the RGB and depth encoder features of levels 3, 4 and 5.
///
/// `f~^i = conv([f_r^i, f_d^i])`; level 3 passes through, and each higher
/// level is modulated by a spatial map computed from the level below,
/// `f^i = f~^i ⊙ SA(prev) + f~^i`. Level 4 takes its map from `f~^3`, level 5
/// from the already modulated `f^4`.
#[derive(Clone, Debug)]
pub struct PaiUnit {
    pub fuse: Vec<ConvBnRelu>,
    pub sa: SpatialAttention,
    pub mode: PaiMode,
}

impl PaiUnit {
    /// `rgb`, `depth` and `fused` list the channel counts of levels 3..5.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        rgb: [usize; 3],
        depth: [usize; 3],
        fused: [usize; 3],
        mode: PaiMode,
    ) -> Self {
        let fuse = (0..3)
            .map(|i| {
                ConvBnRelu::new(
                    store,
                    rng,
                    &format!("{name}.fuse{}", i + 3),
                    ConvSpec::cbr(rgb[i] + depth[i], fused[i], 3),
                )
            })
            .collect();
        Self {
            fuse,
            sa: SpatialAttention::new(store, rng, &format!("{name}.sa")),
            mode,
        }
    }

    /// Concat-conv features `f~^3..f~^5`.
    pub fn fused(&self, ctx: &mut Ctx, rgb: &[Var; 3], depth: &[Var; 3]) -> Result<[Var; 3]> {
        let mut out = [rgb[0]; 3];
        for i in 0..3 {
            let (rs, ds) = (ctx.tape.shape(rgb[i]), ctx.tape.shape(depth[i]));
            if rs[0] != ds[0] || rs[2..] != ds[2..] {
                return Err(Error::ShapeMismatch {
                    op: "pai_forward",
                    left: rs,
                    right: ds,
                });
            }
            let cat = ctx.tape.concat_channels(&[rgb[i], depth[i]])?;
            out[i] = self.fuse[i].forward(ctx, cat)?;
        }
        Ok(out)
    }

    pub fn forward(&self, ctx: &mut Ctx, rgb: &[Var; 3], depth: &[Var; 3]) -> Result<[Var; 3]> {
        let tilde = self.fused(ctx, rgb, depth)?;
        if self.mode == PaiMode::Off {
            return Ok(tilde);
        }
        let mut out = tilde;
        let mut guide = tilde[0];
        for i in 1..3 {
            let [_, _, h, w] = ctx.tape.shape(tilde[i]);
            let g = resize_to(ctx, guide, h, w)?;
            let a = self.sa.forward(ctx, g)?;
            let modulated = ctx.tape.mul(tilde[i], a)?;
            out[i] = ctx.tape.add(modulated, tilde[i])?;
            guide = out[i];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::nn_ops;
    use crate::tensor::{self as t, Tensor};

    struct Case {
        store: ParamStore,
        unit: PaiUnit,
        rgb: Vec<Tensor>,
        depth: Vec<Tensor>,
    }

    fn case(seed: u64) -> Case {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let unit = PaiUnit::new(
            &mut store,
            &mut rng,
            "pai",
            [3, 4, 4],
            [2, 2, 3],
            [4, 4, 5],
            PaiMode::On,
        );
        let sizes = [(8, 8), (4, 4), (4, 4)];
        let rc = [3, 4, 4];
        let dc = [2, 2, 3];
        let rgb = (0..3)
            .map(|i| Tensor::rand_uniform([2, rc[i], sizes[i].0, sizes[i].1], -1.0, 1.0, &mut rng))
            .collect();
        let depth = (0..3)
            .map(|i| Tensor::rand_uniform([2, dc[i], sizes[i].0, sizes[i].1], -1.0, 1.0, &mut rng))
            .collect();
        Case {
            store,
            unit,
            rgb,
            depth,
        }
    }

    fn run(c: &Case, training: bool) -> (Vec<Tensor>, Vec<Tensor>) {
        let mut tape = Tape::new();
        let mut ctx = Ctx::bind(&mut tape, &c.store, training);
        let r: Vec<Var> = c.rgb.iter().map(|x| ctx.tape.constant(x.clone())).collect();
        let d: Vec<Var> = c.depth.iter().map(|x| ctx.tape.constant(x.clone())).collect();
        let r = [r[0], r[1], r[2]];
        let d = [d[0], d[1], d[2]];
        let tilde = c.unit.fused(&mut ctx, &r, &d).unwrap();
        let out = c.unit.forward(&mut ctx, &r, &d).unwrap();
        (
            tilde.iter().map(|&v| ctx.tape.value(v).clone()).collect(),
            out.iter().map(|&v| ctx.tape.value(v).clone()).collect(),
        )
    }

    #[test]
    fn forced_spatial_attention_gives_identity_or_doubling() {
        let mut c = case(1);
        c.store.get_mut(c.unit.sa.conv.bias).data_mut().fill(-1000.0);
        let (tilde, out) = run(&c, false);
        assert_eq!(out, tilde);
        c.store.get_mut(c.unit.sa.conv.bias).data_mut().fill(1000.0);
        let (tilde, out) = run(&c, false);
        assert_eq!(out[0], tilde[0]);
        for i in 1..3 {
            assert_eq!(out[i], tilde[i].scale(2.0));
        }
    }

    #[test]
    fn zero_spatial_conv_scales_by_one_and_a_half() {
        let mut c = case(2);
        c.unit.sa.conv.zero(&mut c.store);
        let (tilde, out) = run(&c, true);
        for i in 1..3 {
            assert_eq!(out[i], tilde[i].scale(1.5));
        }
    }

    #[test]
    fn off_mode_is_concat_conv() {
        let mut c = case(3);
        c.unit.mode = PaiMode::Off;
        let (tilde, out) = run(&c, false);
        assert_eq!(out, tilde);
    }

    #[test]
    fn matches_step_by_step_oracle() {
        let c = case(4);
        let (_, out) = run(&c, false);
        let mut store = c.store.clone();
        let tilde: Vec<Tensor> = (0..3)
            .map(|i| {
                let cat = t::concat_channels(&[&c.rgb[i], &c.depth[i]]).unwrap();
                c.unit.fuse[i].apply(&mut store, &cat, false).unwrap()
            })
            .collect();
        let sa = |x: &Tensor| {
            let mean = nn_ops::channel_mean(x);
            let (max, _) = nn_ops::channel_max(x);
            let cat = t::concat_channels(&[&mean, &max]).unwrap();
            let conv = nn_ops::conv2d(
                &cat,
                c.store.get(c.unit.sa.conv.weight),
                Some(c.store.get(c.unit.sa.conv.bias)),
                1,
                1,
            )
            .unwrap();
            nn_ops::sigmoid(&conv)
        };
        let a3 = sa(&nn_ops::resize(&tilde[0], 4, 4, nn_ops::ResizeMode::AvgPoolDown).unwrap());
        let f4 = t::add(&t::mul(&tilde[1], &a3).unwrap(), &tilde[1]).unwrap();
        let a4 = sa(&f4);
        let f5 = t::add(&t::mul(&tilde[2], &a4).unwrap(), &tilde[2]).unwrap();
        assert_eq!(out[0], tilde[0]);
        assert!(out[1].max_abs_diff(&f4) < 1e-12);
        assert!(out[2].max_abs_diff(&f5) < 1e-12);
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let mut c = case(5);
        c.depth[1] = Tensor::zeros([2, 2, 2, 2]);
        let mut tape = Tape::new();
        let mut ctx = Ctx::bind(&mut tape, &c.store, false);
        let r: Vec<Var> = c.rgb.iter().map(|x| ctx.tape.constant(x.clone())).collect();
        let d: Vec<Var> = c.depth.iter().map(|x| ctx.tape.constant(x.clone())).collect();
        assert!(c
            .unit
            .forward(&mut ctx, &[r[0], r[1], r[2]], &[d[0], d[1], d[2]])
            .is_err());
    }
}
