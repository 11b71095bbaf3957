//! The three cross-modality units on random features: attention-guided
//! encoder fusion, non-local reweighting and gated decoder fusion.

use cirnet::fusion::{CmwrMode, CmwrUnit, IgfInputs, IgfMode, IgfUnit, PaiMode, PaiUnit};
use cirnet::params::{evaluate, ParamStore};
use cirnet::{Rng, Tensor};

fn main() -> anyhow::Result<()> {
    let mut rng = Rng::new(3);
    let mut rand = |shape| Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng);

    // encoder levels 3..5 at 64×64 input: 8×8, 4×4, 4×4
    let rgb = [rand([1, 32, 8, 8]), rand([1, 48, 4, 4]), rand([1, 64, 4, 4])];
    let depth = [rand([1, 32, 8, 8]), rand([1, 48, 4, 4]), rand([1, 64, 4, 4])];
    let mut store = ParamStore::new();
    let pai = PaiUnit::new(
        &mut store,
        &mut Rng::new(0),
        "pai",
        [32, 48, 64],
        [32, 48, 64],
        [32, 48, 64],
        PaiMode::On,
    );
    for level in 0..3 {
        let f = evaluate(&store, false, |ctx| {
            let r = rgb.clone().map(|t| ctx.tape.constant(t));
            let d = depth.clone().map(|t| ctx.tape.constant(t));
            Ok(pai.forward(ctx, &r, &d)?[level])
        })?;
        println!("PAI level {}: {:?}", level + 3, f.shape());
    }

    let mut store = ParamStore::new();
    let cmwr = CmwrUnit::new(&mut store, &mut Rng::new(1), "cmwr", 64, CmwrMode::Full)?;
    let w = evaluate(&store, false, |ctx| {
        let [r, d, x] = [&rgb[2], &depth[2], &rgb[2]].map(|t| ctx.tape.constant(t.clone()));
        cmwr.weights(ctx, r, d, x)
    })?;
    let [_, _, n, _] = w.shape();
    let row_sums: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w.at(0, 0, i, j)).sum()).collect();
    println!(
        "cmWR weights {:?}, row sums within {:.1e} of 1",
        w.shape(),
        row_sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    );

    // a single position has nothing to mix with: every stream is doubled
    let single = Tensor::rand_uniform([1, 64, 1, 1], -1.0, 1.0, &mut Rng::new(9));
    let doubled = evaluate(&store, false, |ctx| {
        let v = ctx.tape.constant(single.clone());
        Ok(cmwr.forward(ctx, v, v, v)?.rgbd)
    })?;
    println!(
        "cmWR at 1×1: output = 2 × input (error {:.1e})",
        doubled.max_abs_diff(&single.scale(2.0))
    );

    let mut rng = Rng::new(4);
    let mut rand = |shape| Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng);
    let inputs = [
        rand([1, 16, 8, 8]),
        rand([1, 16, 8, 8]),
        rand([1, 32, 8, 8]),
        rand([1, 32, 8, 8]),
        rand([1, 16, 4, 4]),
    ];
    for mode in [IgfMode::Gate, IgfMode::Add, IgfMode::Cat, IgfMode::Off] {
        let mut store = ParamStore::new();
        let igf = IgfUnit::new(&mut store, &mut Rng::new(2), "igf", 16, 32, 32, 4, mode)?;
        let y = evaluate(&store, false, |ctx| {
            let [rgb_dec, depth_dec, rgb_skip, depth_skip, prev] = inputs.clone().map(|t| ctx.tape.constant(t));
            igf.forward(
                ctx,
                &IgfInputs {
                    rgb_dec,
                    depth_dec,
                    rgb_skip,
                    depth_skip,
                    prev,
                },
            )
        })?;
        println!("IGF {mode:?}: {:?}, mean {:.4}", y.shape(), y.mean());
    }
    Ok(())
}
