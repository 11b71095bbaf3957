//! Spatial attention, channel attention, their rank-1 3D combination and
//! the self-modality refinement unit built on top of them.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn_ops::{ConvBnRelu, ConvSpec};
use crate::params::{Ctx, ParamStore};
use crate::tensor::Rng;

/// `sigmoid(conv3x3([mean_c(x), max_c(x)]))`, shape `(N, 1, H, W)`.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: ConvBnRelu,
}

impl SpatialAttention {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str) -> Self {
        Self {
            conv: ConvBnRelu::new(store, rng, &format!("{name}.conv"), ConvSpec::plain(2, 1, 3)),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mean = ctx.tape.channel_mean(x);
        let max = ctx.tape.channel_max(x);
        let pooled = ctx.tape.concat_channels(&[mean, max])?;
        let logits = self.conv.forward(ctx, pooled)?;
        Ok(ctx.tape.sigmoid(logits))
    }
}

/// Squeeze-and-excitation channel gate, shape `(N, C, 1, 1)`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub fc1: ConvBnRelu,
    pub fc2: ConvBnRelu,
    pub reduction: usize,
}

impl ChannelAttention {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) || channels < reduction {
            return Err(Error::invalid(
                "channel_attention",
                format!("{channels} channels not divisible by reduction {reduction}"),
            ));
        }
        let hidden = channels / reduction;
        Ok(Self {
            fc1: ConvBnRelu::new(store, rng, &format!("{name}.fc1"), ConvSpec::plain(channels, hidden, 1)),
            fc2: ConvBnRelu::new(store, rng, &format!("{name}.fc2"), ConvSpec::plain(hidden, channels, 1)),
            reduction,
        })
    }

    /// Pre-sigmoid gate `fc2(relu(fc1(gap(x))))`.
    pub fn logits(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let pooled = ctx.tape.global_avg_pool(x);
        let h = self.fc1.forward(ctx, pooled)?;
        let h = ctx.tape.relu(h);
        self.fc2.forward(ctx, h)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let l = self.logits(ctx, x)?;
        Ok(ctx.tape.sigmoid(l))
    }

    pub fn zero(&self, store: &mut ParamStore) {
        self.fc1.zero(store);
        self.fc2.zero(store);
    }
}

/// Outer product of a channel gate `(N, C, 1, 1)` and a spatial map
/// `(N, 1, H, W)`, computed per batch item as a `C×1 · 1×HW` product.
pub fn attention_3d(ctx: &mut Ctx, channel: Var, spatial: Var) -> Result<Var> {
    let [n, c, ..] = ctx.tape.shape(channel);
    let [sn, _, h, w] = ctx.tape.shape(spatial);
    if sn != n {
        return Err(Error::ShapeMismatch {
            op: "attention_3d",
            left: ctx.tape.shape(channel),
            right: ctx.tape.shape(spatial),
        });
    }
    let col = ctx.tape.reshape(channel, [n, 1, c, 1])?;
    let row = ctx.tape.reshape(spatial, [n, 1, 1, h * w])?;
    let outer = ctx.tape.matmul(col, row)?;
    ctx.tape.reshape(outer, [n, c, h, w])
}

/// Which attention the refinement unit applies before its residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmarVariant {
    /// Rank-1 spatial × channel tensor.
    #[default]
    Full3d,
    /// Channel gate only.
    ChannelOnly,
    /// Spatial map only.
    SpatialOnly,
    /// Spatial attention, then channel attention on the result.
    SpatialThenChannel,
}

/// Self-modality refinement: `out_conv(A ⊙ x + x)`.
#[derive(Clone, Debug)]
pub struct SmarUnit {
    pub sa: SpatialAttention,
    pub ca: ChannelAttention,
    pub out_conv: ConvBnRelu,
    pub variant: SmarVariant,
    pub channels: usize,
}

impl SmarUnit {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        channels: usize,
        reduction: usize,
        variant: SmarVariant,
    ) -> Result<Self> {
        Ok(Self {
            sa: SpatialAttention::new(store, rng, &format!("{name}.sa")),
            ca: ChannelAttention::new(store, rng, &format!("{name}.ca"), channels, reduction)?,
            out_conv: ConvBnRelu::new(store, rng, &format!("{name}.out"), ConvSpec::cbr(channels, channels, 3)),
            variant,
            channels,
        })
    }

    /// The attention tensor `A_3D` for `x`.
    pub fn attention(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let ca = self.ca.forward(ctx, x)?;
        let sa = self.sa.forward(ctx, x)?;
        attention_3d(ctx, ca, sa)
    }

    /// `A ⊙ x + x`, the tensor fed to the output convolution.
    pub fn pre_conv(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let c = ctx.tape.shape(x)[1];
        if c != self.channels {
            return Err(Error::invalid(
                "smar_refine",
                format!("unit has {} channels, input has {c}", self.channels),
            ));
        }
        let attended = match self.variant {
            SmarVariant::Full3d => {
                let a = self.attention(ctx, x)?;
                ctx.tape.mul(a, x)?
            }
            SmarVariant::ChannelOnly => {
                let a = self.ca.forward(ctx, x)?;
                ctx.tape.mul(x, a)?
            }
            SmarVariant::SpatialOnly => {
                let a = self.sa.forward(ctx, x)?;
                ctx.tape.mul(x, a)?
            }
            SmarVariant::SpatialThenChannel => {
                let s = self.sa.forward(ctx, x)?;
                let y = ctx.tape.mul(x, s)?;
                let c = self.ca.forward(ctx, y)?;
                ctx.tape.mul(y, c)?
            }
        };
        ctx.tape.add(attended, x)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let pre = self.pre_conv(ctx, x)?;
        self.out_conv.forward(ctx, pre)
    }
}
