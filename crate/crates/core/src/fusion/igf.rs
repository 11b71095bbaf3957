use serde::{Deserialize, Serialize};

use crate::attention::ChannelAttention;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn_ops::{ConvBnRelu, ConvSpec};
use crate::params::{Ctx, ParamStore};
use crate::tensor::Rng;

/// How the decoder blends modality features with the RGB-D path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgfMode {
    /// `P ⊙ H + (1 - P) ⊙ up(prev)` with a learned channel gate `P`.
    #[default]
    #[serde(alias = "on")]
    Gate,
    /// `H + up(prev)`.
    Add,
    /// `conv([H, up(prev)])`.
    Cat,
    /// `up(prev)` alone: a plain upsampling decoder.
    Off,
}

/// Per-level decoder inputs. `prev` is upsampled to the level size.
#[derive(Clone, Copy, Debug)]
pub struct IgfInputs {
    pub rgb_dec: Var,
    pub depth_dec: Var,
    pub rgb_skip: Var,
    pub depth_skip: Var,
    pub prev: Var,
}

/// Importance-gated fusion for one decoder level.
#[derive(Clone, Debug)]
pub struct IgfUnit {
    pub rgb_skip_conv: ConvBnRelu,
    pub depth_skip_conv: ConvBnRelu,
    /// 1×1 projection of the 2C-channel `H` back to C channels.
    pub project: ConvBnRelu,
    pub merge_conv: ConvBnRelu,
    pub ca: ChannelAttention,
    pub out_conv: ConvBnRelu,
    pub mode: IgfMode,
    pub channels: usize,
}

impl IgfUnit {
    /// `channels` is the decoder width; `skip_rgb`/`skip_depth` the encoder
    /// channel counts at this level.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        channels: usize,
        skip_rgb: usize,
        skip_depth: usize,
        reduction: usize,
        mode: IgfMode,
    ) -> Result<Self> {
        let c = channels;
        Ok(Self {
            rgb_skip_conv: ConvBnRelu::new(
                store,
                rng,
                &format!("{name}.rgb_skip"),
                ConvSpec::cbr(c + skip_rgb, c, 3),
            ),
            depth_skip_conv: ConvBnRelu::new(
                store,
                rng,
                &format!("{name}.depth_skip"),
                ConvSpec::cbr(c + skip_depth, c, 3),
            ),
            project: ConvBnRelu::new(store, rng, &format!("{name}.project"), ConvSpec::plain(2 * c, c, 1)),
            merge_conv: ConvBnRelu::new(store, rng, &format!("{name}.merge"), ConvSpec::cbr(3 * c, c, 1)),
            ca: ChannelAttention::new(store, rng, &format!("{name}.ca"), c, reduction)?,
            out_conv: ConvBnRelu::new(store, rng, &format!("{name}.out"), ConvSpec::cbr(c, c, 3)),
            mode,
            channels,
        })
    }

    fn check(&self, ctx: &Ctx, x: &IgfInputs) -> Result<(usize, usize)> {
        let [_, _, h, w] = ctx.tape.shape(x.rgb_dec);
        for v in [x.depth_dec, x.rgb_skip, x.depth_skip] {
            let s = ctx.tape.shape(v);
            if s[2..] != [h, w] {
                return Err(Error::ShapeMismatch {
                    op: "igf_step",
                    left: ctx.tape.shape(x.rgb_dec),
                    right: s,
                });
            }
        }
        Ok((h, w))
    }

    /// `H = [rgb_skip_conv([rgb_dec, rgb_skip]), depth_skip_conv([depth_dec, depth_skip])]`.
    pub fn modality_features(&self, ctx: &mut Ctx, x: &IgfInputs) -> Result<Var> {
        let r = ctx.tape.concat_channels(&[x.rgb_dec, x.rgb_skip])?;
        let r = self.rgb_skip_conv.forward(ctx, r)?;
        let d = ctx.tape.concat_channels(&[x.depth_dec, x.depth_skip])?;
        let d = self.depth_skip_conv.forward(ctx, d)?;
        ctx.tape.concat_channels(&[r, d])
    }

    /// `prev` upsampled to this level.
    pub fn upsampled_prev(&self, ctx: &mut Ctx, x: &IgfInputs) -> Result<Var> {
        let (h, w) = self.check(ctx, x)?;
        ctx.tape.upsample_to(x.prev, h, w)
    }

    /// Importance map `P = sigmoid(CA(U))`, `U = merge_conv([H, up(prev)])`.
    pub fn gate(&self, ctx: &mut Ctx, h: Var, up: Var) -> Result<Var> {
        let u = ctx.tape.concat_channels(&[h, up])?;
        let u = self.merge_conv.forward(ctx, u)?;
        self.ca.forward(ctx, u)
    }

    /// The tensor handed to `out_conv`.
    pub fn pre_conv(&self, ctx: &mut Ctx, x: &IgfInputs) -> Result<Var> {
        let up = self.upsampled_prev(ctx, x)?;
        if self.mode == IgfMode::Off {
            return Ok(up);
        }
        let h = self.modality_features(ctx, x)?;
        match self.mode {
            IgfMode::Gate => {
                let p = self.gate(ctx, h, up)?;
                let hp = self.project.forward(ctx, h)?;
                let open = ctx.tape.mul(hp, p)?;
                let closed_w = ctx.tape.affine(p, -1.0, 1.0);
                let closed = ctx.tape.mul(up, closed_w)?;
                ctx.tape.add(open, closed)
            }
            IgfMode::Add => {
                let hp = self.project.forward(ctx, h)?;
                ctx.tape.add(hp, up)
            }
            IgfMode::Cat => {
                let u = ctx.tape.concat_channels(&[h, up])?;
                self.merge_conv.forward(ctx, u)
            }
            IgfMode::Off => unreachable!(),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &IgfInputs) -> Result<Var> {
        let pre = self.pre_conv(ctx, x)?;
        self.out_conv.forward(ctx, pre)
    }
}
