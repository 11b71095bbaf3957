//! Spatial, channel and 3D attention, and the self-modality refinement
//! unit built from them.

use cirnet::attention::{ChannelAttention, SmarUnit, SmarVariant, SpatialAttention};
use cirnet::params::{evaluate, ParamStore};
use cirnet::{Rng, Tensor};

fn main() -> anyhow::Result<()> {
    let mut rng = Rng::new(0);
    let x = Tensor::rand_uniform([1, 8, 4, 4], -1.0, 1.0, &mut rng);

    let mut store = ParamStore::new();
    let sa = SpatialAttention::new(&mut store, &mut rng, "sa");
    let ca = ChannelAttention::new(&mut store, &mut rng, "ca", 8, 4)?;
    let s = evaluate(&store, false, |ctx| {
        let v = ctx.tape.constant(x.clone());
        sa.forward(ctx, v)
    })?;
    let c = evaluate(&store, false, |ctx| {
        let v = ctx.tape.constant(x.clone());
        ca.forward(ctx, v)
    })?;
    println!(
        "spatial map {:?}, values in [{:.3}, {:.3}]",
        s.shape(),
        min(&s),
        max(&s)
    );
    println!("channel gate {:?}: {:.3?}", c.shape(), c.data());

    for variant in [
        SmarVariant::Full3d,
        SmarVariant::ChannelOnly,
        SmarVariant::SpatialOnly,
        SmarVariant::SpatialThenChannel,
    ] {
        let mut store = ParamStore::new();
        let unit = SmarUnit::new(&mut store, &mut Rng::new(1), "smar", 8, 4, variant)?;
        let y = evaluate(&store, false, |ctx| {
            let v = ctx.tape.constant(x.clone());
            unit.forward(ctx, v)
        })?;
        println!("{variant:?}: output {:?}, mean {:.4}", y.shape(), y.mean());
    }

    // with both attention convolutions zeroed every gate is 0.5, so A = 0.25
    let mut store = ParamStore::new();
    let unit = SmarUnit::new(&mut store, &mut Rng::new(2), "smar", 8, 4, SmarVariant::Full3d)?;
    unit.ca.zero(&mut store);
    unit.sa.conv.zero(&mut store);
    let pre = evaluate(&store, false, |ctx| {
        let v = ctx.tape.constant(x.clone());
        unit.pre_conv(ctx, v)
    })?;
    println!(
        "zeroed attention: pre-conv / input = 1.25 (max error {:.1e})",
        pre.max_abs_diff(&x.scale(1.25))
    );
    Ok(())
}

fn min(t: &Tensor) -> f64 {
    t.data().iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(t: &Tensor) -> f64 {
    t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
