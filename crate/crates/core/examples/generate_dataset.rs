//! Render a handful of synthetic RGB-D scenes and write them as PNGs.
//!
//! `cargo run --example generate_dataset -- [out_dir]` (defaults to a
//! temporary directory).

use cirnet::data::{generate, save_sample, SampleDirs, SceneSpec};

fn main() -> anyhow::Result<()> {
    let spec = SceneSpec {
        seed: 7,
        depth_noise: 0.3,
        ..SceneSpec::default()
    };
    let samples = generate(&spec, 6)?;

    let tmp = tempfile::tempdir()?;
    let root = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().to_path_buf());
    let dirs = SampleDirs::under(&root);
    dirs.create()?;
    for (i, s) in samples.iter().enumerate() {
        save_sample(&dirs, i, s)?;
        let fg = s.gt.sum();
        let n = s.gt.numel() as f64;
        let depth_in = s
            .depth
            .data()
            .iter()
            .zip(s.gt.data())
            .filter(|(_, &g)| g == 1.0)
            .map(|(d, _)| d)
            .sum::<f64>()
            / fg;
        let depth_out = s
            .depth
            .data()
            .iter()
            .zip(s.gt.data())
            .filter(|(_, &g)| g == 0.0)
            .map(|(d, _)| d)
            .sum::<f64>()
            / (n - fg);
        println!(
            "{i:04}: {:5.1}% salient, mean depth object {depth_in:.3} vs background {depth_out:.3}",
            100.0 * fg / n
        );
    }
    println!("wrote {} scenes under {}", samples.len(), root.display());
    Ok(())
}
