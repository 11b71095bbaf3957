//! Score blurred and shifted versions of ground-truth masks with MAE,
//! max F-measure and S-measure.

use cirnet::data::{generate, SceneSpec};
use cirnet::metrics::{evaluate, mae, max_f_measure, pr_curve, s_measure};
use cirnet::nn_ops::bilinear_resize;
use cirnet::Tensor;

fn shift_right(t: &Tensor, by: usize) -> Tensor {
    let [_, _, h, w] = t.shape();
    let mut out = Tensor::zeros(t.shape());
    for y in 0..h {
        for x in by..w {
            out.set(0, 0, y, x, t.at(0, 0, y, x - by));
        }
    }
    out
}

fn main() -> anyhow::Result<()> {
    let samples = generate(
        &SceneSpec {
            seed: 5,
            ..SceneSpec::default()
        },
        8,
    )?;
    let g = &samples[0].gt;
    let blurred = bilinear_resize(&bilinear_resize(g, 16, 16), 64, 64);
    for (name, s) in [
        ("exact", g.clone()),
        ("blurred", blurred),
        ("shifted 4px", shift_right(g, 4)),
    ] {
        let curve = pr_curve(&s, g)?;
        println!(
            "{name:<12} MAE {:.4}  maxF {:.4}  S {:.4}",
            mae(&s, g)?,
            max_f_measure(&curve),
            s_measure(&s, g)?
        );
    }

    let items: Vec<_> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("{i:04}"), shift_right(&s.gt, 2), s.gt.clone()))
        .collect();
    let report = evaluate(&items, None)?;
    println!(
        "dataset of {}: mean MAE {:.4}, mean maxF {:.4}, curve maxF {:.4}, mean S {:.4}",
        report.images.len(),
        report.mean_mae,
        report.mean_max_f,
        report.curve_max_f,
        report.mean_s_measure
    );
    print!("{}", report.curve_csv().lines().take(4).collect::<Vec<_>>().join("\n"));
    println!("\n...");
    Ok(())
}
