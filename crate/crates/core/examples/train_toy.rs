//! Overfit the default network on eight synthetic scenes and print the
//! joint loss as it falls from 3 ln 2.
//!
//! `cargo run --release --example train_toy -- [lr] [steps]`

use std::time::Instant;

use cirnet::data::{generate, Batch, SceneSpec};
use cirnet::model::{CirNet, ModelConfig, TrainConfig, Trainer};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let lr: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-3);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);

    let samples = generate(
        &SceneSpec {
            seed: 1,
            ..SceneSpec::default()
        },
        8,
    )?;
    let batch = Batch::from_samples(&samples)?;
    let net = CirNet::new(ModelConfig::default(), 0)?;
    let mut trainer = Trainer::new(
        net,
        TrainConfig {
            lr,
            ..TrainConfig::default()
        },
    )?;

    let start = Instant::now();
    for step in 1..=steps {
        let loss = trainer.train_step(&batch, lr)?;
        if step == 1 || step % 25 == 0 {
            println!(
                "step {step:>4}  total {:.4}  (rgb {:.4}, depth {:.4}, rgbd {:.4})  {:.1?}",
                loss.total,
                loss.rgb,
                loss.depth,
                loss.rgbd,
                start.elapsed()
            );
        }
    }
    Ok(())
}
