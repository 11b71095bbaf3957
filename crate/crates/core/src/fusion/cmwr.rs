use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn_ops::{ConvBnRelu, ConvSpec};
use crate::params::{Ctx, ParamStore};
use crate::tensor::Rng;

/// Which affinity matrices build the spatial weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmwrMode {
    /// `W = softmax_rows(M1 ⊙ M2)`.
    #[default]
    Full,
    /// `W = M1` (RGB-depth affinity only).
    M1Only,
    /// `W = M2` (RGB-D self affinity only).
    M2Only,
}

/// Non-local refinement shared by the three streams.
///
/// With `F_x = reshape(W_x f)` of shape `(C/2, HW)`:
/// `M1 = softmax_rows(F_θᵀ F_ξ)` from RGB and depth,
/// `M2 = softmax_rows(F_φᵀ F_ψ)` from RGB-D, `W = softmax_rows(M1 ⊙ M2)` and
/// each stream becomes `f W ᵀ + f`, so every output position is a convex
/// spatial mixture of the input plus a residual.
#[derive(Clone, Debug)]
pub struct CmwrUnit {
    pub embed_theta: ConvBnRelu,
    pub embed_xi: ConvBnRelu,
    pub embed_phi: ConvBnRelu,
    pub embed_psi: ConvBnRelu,
    pub mode: CmwrMode,
    pub channels: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct CmwrOutput {
    pub rgb: Var,
    pub depth: Var,
    pub rgbd: Var,
    /// Spatial weighting, `(N, 1, HW, HW)`.
    pub weights: Var,
}

impl CmwrUnit {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, channels: usize, mode: CmwrMode) -> Result<Self> {
        if channels < 2 || !channels.is_multiple_of(2) {
            return Err(Error::invalid("cmwr", format!("channel count {channels} must be even")));
        }
        let half = channels / 2;
        let mut embed =
            |tag: &str| ConvBnRelu::new(store, rng, &format!("{name}.{tag}"), ConvSpec::plain(channels, half, 1));
        Ok(Self {
            embed_theta: embed("theta"),
            embed_xi: embed("xi"),
            embed_phi: embed("phi"),
            embed_psi: embed("psi"),
            mode,
            channels,
        })
    }

    fn flat(ctx: &mut Ctx, x: Var) -> Result<Var> {
        let [n, c, h, w] = ctx.tape.shape(x);
        ctx.tape.reshape(x, [n, 1, c, h * w])
    }

    fn affinity(ctx: &mut Ctx, a: Var, b: Var) -> Result<Var> {
        let at = ctx.tape.transpose(a);
        let prod = ctx.tape.matmul(at, b)?;
        Ok(ctx.tape.softmax_rows(prod))
    }

    /// The row-stochastic `(N, 1, HW, HW)` weighting.
    pub fn weights(&self, ctx: &mut Ctx, rgb: Var, depth: Var, rgbd: Var) -> Result<Var> {
        let shape = ctx.tape.shape(rgb);
        for other in [depth, rgbd] {
            let s = ctx.tape.shape(other);
            if s != shape {
                return Err(Error::ShapeMismatch {
                    op: "cmwr_refine",
                    left: shape,
                    right: s,
                });
            }
        }
        let m1 = if self.mode != CmwrMode::M2Only {
            let theta = self.embed_theta.forward(ctx, rgb)?;
            let xi = self.embed_xi.forward(ctx, depth)?;
            let (theta, xi) = (Self::flat(ctx, theta)?, Self::flat(ctx, xi)?);
            Some(Self::affinity(ctx, theta, xi)?)
        } else {
            None
        };
        let m2 = if self.mode != CmwrMode::M1Only {
            let phi = self.embed_phi.forward(ctx, rgbd)?;
            let psi = self.embed_psi.forward(ctx, rgbd)?;
            let (phi, psi) = (Self::flat(ctx, phi)?, Self::flat(ctx, psi)?);
            Some(Self::affinity(ctx, phi, psi)?)
        } else {
            None
        };
        match (m1, m2) {
            (Some(m1), Some(m2)) => {
                let prod = ctx.tape.mul(m1, m2)?;
                Ok(ctx.tape.softmax_rows(prod))
            }
            (Some(m), None) | (None, Some(m)) => Ok(m),
            (None, None) => unreachable!(),
        }
    }

    /// `reshape(f) · Wᵀ + f` for one stream.
    pub fn reweight(ctx: &mut Ctx, f: Var, weights: Var) -> Result<Var> {
        let shape = ctx.tape.shape(f);
        let flat = Self::flat(ctx, f)?;
        let wt = ctx.tape.transpose(weights);
        let mixed = ctx.tape.matmul(flat, wt)?;
        let mixed = ctx.tape.reshape(mixed, shape)?;
        ctx.tape.add(mixed, f)
    }

    pub fn forward(&self, ctx: &mut Ctx, rgb: Var, depth: Var, rgbd: Var) -> Result<CmwrOutput> {
        let weights = self.weights(ctx, rgb, depth, rgbd)?;
        Ok(CmwrOutput {
            rgb: Self::reweight(ctx, rgb, weights)?,
            depth: Self::reweight(ctx, depth, weights)?,
            rgbd: Self::reweight(ctx, rgbd, weights)?,
            weights,
        })
    }
}
