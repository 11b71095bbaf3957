//! Cross-modality interaction units: progressive attention-guided
//! integration in the encoder, cross-modality weighting refinement in the
//! middleware and importance-gated fusion in the decoder.

mod cmwr;
mod igf;
mod pai;

pub use cmwr::{CmwrMode, CmwrOutput, CmwrUnit};
pub use igf::{IgfInputs, IgfMode, IgfUnit};
pub use pai::{PaiMode, PaiUnit};

use crate::autodiff::Var;
use crate::error::Result;
use crate::nn_ops::ResizeMode;
use crate::params::Ctx;

/// Bring `x` to `h×w`: identity, block-average downsampling or bilinear
/// upsampling.
pub fn resize_to(ctx: &mut Ctx, x: Var, h: usize, w: usize) -> Result<Var> {
    let [_, _, xh, xw] = ctx.tape.shape(x);
    if (xh, xw) == (h, w) {
        Ok(x)
    } else if xh >= h && xw >= w {
        ctx.tape.resize(x, h, w, ResizeMode::AvgPoolDown)
    } else {
        ctx.tape.resize(x, h, w, ResizeMode::BilinearUp)
    }
}
