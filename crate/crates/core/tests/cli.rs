use std::path::Path;
use std::process::{Command, Output};

use cirnet::cli::{EXIT_CONFIG, EXIT_GRAD_CHECK, EXIT_MISSING, EXIT_NON_FINITE};
use cirnet::metrics::EvalReport;

fn cirnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cirnet"))
        .args(args)
        .output()
        .expect("spawn cirnet")
}

fn ok(args: &[&str]) -> Output {
    let out = cirnet(args);
    assert!(
        out.status.success(),
        "`cirnet {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, count: &str, seed: &str) {
    ok(&[
        "generate",
        "--out",
        p(dir),
        "--count",
        count,
        "--seed",
        seed,
        "--size",
        "32",
    ]);
}

#[test]
fn ground_truth_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    generate(&ds, "6", "11");
    let out = ok(&[
        "eval",
        "--predictions",
        p(&ds.join("gt")),
        "--suffix",
        "gt",
        "--data",
        p(&ds),
        "--out",
        p(&tmp.path().join("ev")),
    ]);
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(
        summary.contains("MAE 0.0000") && summary.contains("maxF 1.0000"),
        "{summary}"
    );

    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report.images.len(), 6);
    assert_eq!((report.mean_mae, report.curve_max_f), (0.0, 1.0));
    assert!((report.mean_s_measure - 1.0).abs() < 1e-6);
    let csv = std::fs::read_to_string(tmp.path().join("ev/pr_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 257);
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let run = tmp.path().join("run");
    generate(&ds, "4", "2");
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "[model]\nchannels = [4, 4, 4, 4, 4]\ndecoder_width = 4\nimage_size = 32\n",
    )
    .unwrap();
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&ds),
        "--out",
        p(&run),
        "--lr",
        "0",
        "--epochs",
        "2",
        "--batch-size",
        "2",
    ]);
    let init = std::fs::read(run.join("init.cirk")).unwrap();
    assert_eq!(init, std::fs::read(run.join("final.cirk")).unwrap());
    assert_eq!(init, std::fs::read(run.join("epoch_002.cirk")).unwrap());

    let log = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(cirnet::cli::LOSS_HEADER));
    // 4 scenes in batches of 2 for 2 epochs; untrained heads give ln 2 per stream
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!((r[1] - 3.0 * std::f64::consts::LN_2).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn generation_is_reproducible_and_seed_dependent() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    generate(&a, "5", "7");
    generate(&b, "5", "7");
    generate(&c, "5", "8");
    for kind in ["rgb", "depth", "gt"] {
        for i in 0..5 {
            let name = format!("{kind}/{i:04}_{kind}.png");
            let bytes = std::fs::read(a.join(&name)).unwrap();
            assert_eq!(bytes, std::fs::read(b.join(&name)).unwrap(), "{name}");
            if kind == "rgb" {
                assert_ne!(bytes, std::fs::read(c.join(&name)).unwrap(), "{name}");
            }
        }
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| cirnet(args).status.code();

    assert_eq!(
        code(&["generate", "--out", p(tmp.path()), "--size", "30"]),
        Some(EXIT_CONFIG)
    );
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = 1.0\n").unwrap();
    assert_eq!(code(&["grad-check", "--config", p(&bad)]), Some(EXIT_CONFIG));

    let nowhere = tmp.path().join("missing");
    assert_eq!(
        code(&[
            "infer",
            "--checkpoint",
            p(&nowhere.join("x.cirk")),
            "--data",
            p(&nowhere),
            "--out",
            p(&nowhere)
        ]),
        Some(EXIT_MISSING)
    );
    assert_eq!(
        code(&["train", "--data", p(&nowhere), "--out", p(&tmp.path().join("r"))]),
        Some(EXIT_MISSING)
    );

    let ds = tmp.path().join("ds");
    generate(&ds, "2", "0");
    assert_eq!(
        code(&[
            "train",
            "--data",
            p(&ds),
            "--out",
            p(&tmp.path().join("r")),
            "--lr",
            "1e308",
            "--epochs",
            "6",
            "--batch-size",
            "1"
        ]),
        Some(EXIT_NON_FINITE)
    );

    assert_eq!(
        code(&["grad-check", "--seeds", "1", "--filter", "sigmoid", "--tol", "1e-14"]),
        Some(EXIT_GRAD_CHECK)
    );
    let pass = ok(&["grad-check", "--seeds", "1", "--filter", "sigmoid"]);
    assert!(String::from_utf8_lossy(&pass.stdout).contains("0 failed"));
}

#[test]
fn readme_config_block_is_the_default() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml\n").unwrap() + "```toml\n".len();
    let block = &readme[start..start + readme[start..].find("```").unwrap()];
    let parsed = cirnet::cli::Config::from_toml(block).unwrap();
    assert_eq!(parsed, cirnet::cli::Config::default());
}
