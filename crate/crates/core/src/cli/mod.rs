//! Command-line front end: `generate`, `train`, `infer`, `eval` and
//! `grad-check`.
//!
//! Every subcommand reads an optional TOML file (`--config`) with the
//! sections `[model]`, `[train]`, `[scene]`, `[generate]` and `[paths]`;
//! unknown keys are rejected and command-line flags override file values.
//!
//! Exit codes: 0 success, 1 other failure, 2 bad configuration or usage,
//! 3 missing input files, 4 non-finite training loss, 5 failed gradient
//! check.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{list_stems, load_gray, load_pairs, resize_sample, save_gray, save_sample, SampleDirs, SceneSpec};
use crate::error::{Error, Result};
use crate::gradsuite;
use crate::metrics::evaluate;
use crate::model::{checkpoint, CirNet, ModelConfig, StepRecord, TrainConfig, Trainer};
use crate::nn_ops::bilinear_resize;
use crate::tensor::Tensor;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;
pub const EXIT_GRAD_CHECK: i32 = 5;

/// Environment variable capping the number of evaluation workers.
pub const THREADS_ENV: &str = "CIRNET_THREADS";

pub const LOSS_HEADER: &str = "step,loss_total,loss_r,loss_d,loss_rgbd";

/// File-level configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scene: SceneSpec,
    pub generate: GenerateSection,
    pub paths: Paths,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    /// Number of scenes to write.
    pub count: usize,
    /// Index of the first scene, so disjoint splits can share a seed.
    pub first: u64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { count: 200, first: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset root holding `rgb/`, `depth/` and `gt/`.
    pub data: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Directory of predicted maps for `eval`.
    pub predictions: Option<PathBuf>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Parser, Debug)]
#[command(name = "cirnet", version, about = "RGB-D salient object detection at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic RGB-D dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        first: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        contrast: Option<f64>,
        #[arg(long)]
        depth_noise: Option<f64>,
    },
    /// Train on a dataset directory; writes checkpoints and a loss log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable flips, rotations and multi-scale resizing.
        #[arg(long)]
        no_augment: bool,
    },
    /// Predict saliency maps for every scene of a dataset directory.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predicted maps against ground-truth masks.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory of `NNNN_<suffix>.png` predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Dataset root whose `gt/` holds the masks.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "rgbd")]
        suffix: String,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare tape gradients with central differences.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, `0..seeds`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = gradsuite::DEFAULT_TOL)]
        tol: f64,
        /// Only cases whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
}

/// Parse `argv` (program name first), run the subcommand and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::MissingFile(_) => EXIT_MISSING,
        Error::NonFinite(_) => EXIT_NON_FINITE,
        _ => EXIT_OTHER,
    }
}

fn load_config(common: &Common) -> Result<Config> {
    match &common.config {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn require(value: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::Config(format!("no {what} given (flag or [paths] entry)")))
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument { op, msg } => Error::Config(format!("{op}: {msg}")),
        other => other,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Generate {
            common,
            out,
            count,
            first,
            seed,
            size,
            contrast,
            depth_noise,
        } => {
            let mut cfg = load_config(&common)?;
            let s = &mut cfg.scene;
            s.seed = seed.unwrap_or(s.seed);
            s.size = size.unwrap_or(s.size);
            s.contrast = contrast.unwrap_or(s.contrast);
            s.depth_noise = depth_noise.unwrap_or(s.depth_noise);
            cfg.generate.count = count.unwrap_or(cfg.generate.count);
            cfg.generate.first = first.unwrap_or(cfg.generate.first);
            let out = require(out.or(cfg.paths.out.clone()), "output directory")?;
            generate(&cfg.scene, &cfg.generate, &out)?;
            Ok(0)
        }
        Command::Train {
            common,
            data,
            out,
            lr,
            epochs,
            batch_size,
            seed,
            no_augment,
        } => {
            let mut cfg = load_config(&common)?;
            let t = &mut cfg.train;
            t.lr = lr.unwrap_or(t.lr);
            t.epochs = epochs.unwrap_or(t.epochs);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.seed = seed.unwrap_or(t.seed);
            t.augment &= !no_augment;
            cfg.paths.data = data.or(cfg.paths.data);
            cfg.paths.out = out.or(cfg.paths.out);
            train(&cfg)?;
            Ok(0)
        }
        Command::Infer {
            common,
            checkpoint,
            data,
            out,
        } => {
            let cfg = load_config(&common)?;
            let ckpt = require(checkpoint.or(cfg.paths.checkpoint), "checkpoint")?;
            let data = require(data.or(cfg.paths.data), "data directory")?;
            let out = require(out.or(cfg.paths.out), "output directory")?;
            infer(&ckpt, &data, &out)?;
            Ok(0)
        }
        Command::Eval {
            common,
            predictions,
            data,
            out,
            suffix,
            threads,
        } => {
            let cfg = load_config(&common)?;
            let pred = require(predictions.or(cfg.paths.predictions), "predictions directory")?;
            let data = require(data.or(cfg.paths.data), "data directory")?;
            let out = require(out.or(cfg.paths.out), "output directory")?;
            let threads = match threads {
                Some(t) => Some(t),
                None => threads_from_env()?,
            };
            eval(&pred, &SampleDirs::under(&data).gt, &suffix, &out, threads)?;
            Ok(0)
        }
        Command::GradCheck {
            common,
            seeds,
            tol,
            filter,
        } => {
            load_config(&common)?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let rows = gradsuite::run(&seeds, tol, filter.as_deref())?;
            let (table, failed) = grad_table(&rows);
            print!("{table}");
            if rows.is_empty() {
                return Err(Error::Config("no gradient check matches the filter".into()));
            }
            Ok(if failed == 0 { 0 } else { EXIT_GRAD_CHECK })
        }
    }
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

/// Write scenes `first..first + count` under `out`.
pub fn generate(spec: &SceneSpec, section: &GenerateSection, out: &Path) -> Result<()> {
    spec.validate().map_err(as_config)?;
    if section.count == 0 {
        return Err(Error::Config("generate.count must be at least 1".into()));
    }
    let dirs = SampleDirs::under(out);
    dirs.create()?;
    for i in section.first..section.first + section.count as u64 {
        save_sample(&dirs, i as usize, &spec.sample(i)?)?;
    }
    eprintln!("wrote {} scenes to {}", section.count, out.display());
    Ok(())
}

fn csv_row(r: &StepRecord) -> String {
    format!(
        "{},{},{},{},{}\n",
        r.step, r.loss.total, r.loss.rgb, r.loss.depth, r.loss.rgbd
    )
}

/// Train from `cfg.paths.data` into `cfg.paths.out`.
///
/// Writes `config.toml` (the resolved configuration), `init.cirk`,
/// `epoch_NNN.cirk` after every epoch, `final.cirk` and `loss.csv`.
pub fn train(cfg: &Config) -> Result<()> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let data = require(cfg.paths.data.clone(), "data directory")?;
    let out = require(cfg.paths.out.clone(), "output directory")?;
    let samples: Vec<_> = load_pairs(&SampleDirs::under(&data))?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    if samples.is_empty() {
        return Err(Error::MissingFile(format!("no scenes under {}", data.display())));
    }
    let size = cfg.model.image_size;
    let samples: Vec<_> = samples.iter().map(|s| resize_sample(s, size)).collect();

    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let net = CirNet::new(cfg.model.clone(), cfg.train.seed)?;
    checkpoint::save(&net, out.join("init.cirk"))?;
    let mut trainer = Trainer::new(net, cfg.train.clone())?;

    let mut log = String::from(LOSS_HEADER);
    log.push('\n');
    for epoch in 0..cfg.train.epochs {
        let mean = trainer.train_epoch(&samples, epoch, |r| log.push_str(&csv_row(r)))?;
        eprintln!(
            "epoch {:>3}  lr {:.3e}  mean loss {mean:.5}",
            epoch + 1,
            cfg.train.lr_at(epoch)
        );
        checkpoint::save(&trainer.net, out.join(format!("epoch_{:03}.cirk", epoch + 1)))?;
        std::fs::write(out.join("loss.csv"), &log)?;
    }
    std::fs::write(out.join("loss.csv"), &log)?;
    checkpoint::save(&trainer.net, out.join("final.cirk"))?;
    Ok(())
}

/// Predict every scene under `data` and write `NNNN_{r,d,rgbd}.png` into
/// `out`; the `rgbd` map is the network's final output.
pub fn infer(ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let net = checkpoint::load(ckpt)?;
    let size = net.config.image_size;
    std::fs::create_dir_all(out)?;
    for (stem, sample) in load_pairs(&SampleDirs::under(data))? {
        let (h, w) = sample.size();
        let input = resize_sample(&sample, size);
        let p = net.predict(&input.rgb, &input.depth)?;
        let back = |t: &Tensor| {
            if (h, w) == (size, size) {
                t.clone()
            } else {
                bilinear_resize(t, h, w)
            }
        };
        save_gray(out.join(format!("{stem}_r.png")), &back(&p.rgb))?;
        save_gray(out.join(format!("{stem}_d.png")), &back(&p.depth))?;
        save_gray(out.join(format!("{stem}_rgbd.png")), &back(&p.rgbd))?;
    }
    Ok(())
}

/// Score `pred/NNNN_<suffix>.png` against `gt/NNNN_gt.png`; writes
/// `report.json` and `pr_curve.csv` into `out`.
pub fn eval(pred: &Path, gt: &Path, suffix: &str, out: &Path, threads: Option<usize>) -> Result<()> {
    let stems = list_stems(gt, "gt")?;
    if stems.is_empty() {
        return Err(Error::MissingFile(format!("no masks under {}", gt.display())));
    }
    let mut items = Vec::with_capacity(stems.len());
    for stem in stems {
        let s = load_gray(pred.join(format!("{stem}_{suffix}.png")))?;
        let g = load_gray(gt.join(format!("{stem}_gt.png")))?;
        items.push((stem, s, g));
    }
    let report = evaluate(&items, threads)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    std::fs::write(out.join("pr_curve.csv"), report.curve_csv())?;
    println!(
        "{} images  MAE {:.4}  maxF {:.4}  S {:.4}",
        report.images.len(),
        report.mean_mae,
        report.curve_max_f,
        report.mean_s_measure
    );
    Ok(())
}

/// Fixed-width pass/fail table and the number of failing rows.
pub fn grad_table(rows: &[gradsuite::SuiteRow]) -> (String, usize) {
    let mut s = String::new();
    writeln!(
        s,
        "{:<28} {:>4} {:>12} {:>8} {:>8}  result",
        "case", "seed", "max_rel_err", "checked", "skipped"
    )
    .unwrap();
    let mut failed = 0;
    for r in rows {
        failed += !r.report.pass as usize;
        writeln!(
            s,
            "{:<28} {:>4} {:>12.3e} {:>8} {:>8}  {}",
            r.name,
            r.seed,
            r.report.max_rel_err,
            r.report.checked,
            r.report.skipped,
            if r.report.pass { "pass" } else { "FAIL" }
        )
        .unwrap();
    }
    writeln!(s, "{} checks, {failed} failed", rows.len()).unwrap();
    (s, failed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("[model]\nchanels = [1, 2, 3, 4, 5]\n").is_err());
        assert!(Config::from_toml("[trian]\nlr = 1.0\n").is_err());
        assert!(matches!(Config::from_toml("[train]\nlr = 1e-3\n"), Ok(c) if c.train.lr == 1e-3));
    }

    #[test]
    fn ablation_flags_parse() {
        let c =
            Config::from_toml("[model]\npai = \"off\"\nsmar = \"channel_only\"\ncmwr = \"m1_only\"\nigf = \"add\"\n")
                .unwrap();
        assert_eq!(c.model.pai, crate::fusion::PaiMode::Off);
        assert_eq!(c.model.smar, crate::model::SmarSetting::ChannelOnly);
        let on = Config::from_toml("[model]\nsmar = \"on\"\ncmwr = \"on\"\nigf = \"on\"\n").unwrap();
        assert_eq!(on.model, ModelConfig::default());
    }

    #[test]
    fn config_round_trips() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn usage_errors_exit_with_config_code() {
        assert_eq!(run(["cirnet", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(run(["cirnet", "generate"]), EXIT_CONFIG);
        assert_eq!(
            run(["cirnet", "generate", "--config", "/nonexistent/c.toml", "--out", "x"]),
            EXIT_MISSING
        );
    }
}
