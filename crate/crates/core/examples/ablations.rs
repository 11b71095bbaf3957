//! Train each ablation setting on the same synthetic split and compare the
//! held-out scores with a centred Gaussian prior.
//!
//! `cargo run --release --example ablations -- [epochs] [train] [test] [lr] [settings...]`
//! where settings are any of `full baseline pai igf cmwr smar` (default:
//! `full baseline`).

use std::time::Instant;

use cirnet::data::SceneSpec;
use cirnet::fusion::{IgfMode, PaiMode};
use cirnet::metrics::{center_prior, evaluate, EvalReport};
use cirnet::model::{CirNet, CmwrSetting, ModelConfig, SmarSetting, TrainConfig, Trainer};

fn setting(name: &str) -> Option<ModelConfig> {
    let base = ModelConfig::baseline();
    Some(match name {
        "full" => ModelConfig::default(),
        "baseline" => base,
        "pai" => ModelConfig {
            pai: PaiMode::On,
            ..base
        },
        "igf" => ModelConfig {
            igf: IgfMode::Gate,
            ..base
        },
        "cmwr" => ModelConfig {
            cmwr: CmwrSetting::Full,
            ..base
        },
        "smar" => ModelConfig {
            smar: SmarSetting::Full3d,
            ..base
        },
        _ => return None,
    })
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (epochs, n_train, n_test, lr) = (
        num(0, 2.0) as usize,
        num(1, 40.0) as u64,
        num(2, 20.0) as u64,
        num(3, 5e-3),
    );
    let mut names: Vec<&str> = args.iter().skip(4).map(String::as_str).collect();
    if names.is_empty() {
        names = vec!["full", "baseline"];
    }

    let spec = SceneSpec {
        seed: 21,
        ..SceneSpec::default()
    };
    let train: Vec<_> = (0..n_train).map(|i| spec.sample(i)).collect::<Result<_, _>>()?;
    let test: Vec<_> = (n_train..n_train + n_test)
        .map(|i| spec.sample(i))
        .collect::<Result<_, _>>()?;

    let prior = center_prior(spec.size, spec.size);
    let items: Vec<_> = test
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("{i:04}"), prior.clone(), s.gt.clone()))
        .collect();
    show("prior", &evaluate(&items, None)?, None);

    for name in names {
        let Some(model) = setting(name) else {
            eprintln!("unknown setting {name}");
            continue;
        };
        let start = Instant::now();
        let net = CirNet::new(model, 0)?;
        let cfg = TrainConfig {
            lr,
            epochs,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(net, cfg)?;
        let losses = trainer.fit(&train, |_| {})?;
        let mut items = Vec::new();
        for (i, s) in test.iter().enumerate() {
            let p = trainer.net.predict(&s.rgb, &s.depth)?;
            items.push((format!("{i:04}"), p.rgbd, s.gt.clone()));
        }
        let report = evaluate(&items, None)?;
        let last = losses.last().copied().unwrap_or(f64::NAN);
        show(name, &report, Some((last, start.elapsed().as_secs_f64())));
    }
    Ok(())
}

fn show(name: &str, r: &EvalReport, train: Option<(f64, f64)>) {
    print!(
        "{name:<9} MAE {:.4}  maxF {:.4}  S {:.4}",
        r.mean_mae, r.curve_max_f, r.mean_s_measure
    );
    if let Some((loss, secs)) = train {
        print!("  (final epoch loss {loss:.4}, {secs:.0}s)");
    }
    println!();
}
