//! `fadnet`: train, run and evaluate stereo disparity networks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input errors.

mod images;
mod run;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fadnet_core::bench::{bench_config, reports_csv, reports_table};
use fadnet_core::io::{
    disparity_histogram, epe, threshold_metrics, DisparityFormat, DisparityMap, DEFAULT_BAD_THRESHOLDS,
};
use fadnet_core::network::{read_checkpoint, write_checkpoint, Network, NetworkConfig};
use fadnet_core::ops::warp_right_to_left;
use fadnet_core::training::{
    generate_dataset, predict_disparity, train_with_progress, SyntheticSpec, TextureMode, TrainConfig,
};
use fadnet_core::Graph;

use crate::images::read_rgb;
use crate::run::{as_batch, load_sample, read_manifest, write_dataset, RunConfig};

/// Input problems the user can fix; reported with exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "fadnet", version, about = "Stereo disparity networks: train, infer, eval, bench, gen-data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write `training_log.txt` and `model.fadw` to OUT_DIR.
    Train {
        /// `key = value` network and run configuration.
        config: PathBuf,
        out_dir: PathBuf,
        /// Dataset written by `gen-data` (or any directory with a manifest).
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        data_dir: Option<PathBuf>,
        /// Train on N freshly generated synthetic pairs.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict a full-resolution disparity map and write it as PFM.
    Infer { checkpoint: PathBuf, left: PathBuf, right: PathBuf, out: PathBuf },
    /// Compare predicted disparities against ground truth, matching files by name.
    Eval {
        #[arg(required_unless_present = "warp_check")]
        pred_dir: Option<PathBuf>,
        #[arg(required_unless_present = "warp_check")]
        gt_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Pfm)]
        format: Format,
        /// Fail when any file lacks a counterpart.
        #[arg(long)]
        strict: bool,
        /// Also print the ground-truth disparity histogram with this bin width.
        #[arg(long, value_name = "WIDTH")]
        histogram: Option<f64>,
        /// Self-test a dataset: warping each right image by its ground truth must reproduce the left image.
        #[arg(long, value_name = "DATA_DIR", conflicts_with_all = ["pred_dir", "gt_dir"])]
        warp_check: Option<PathBuf>,
    },
    /// Time forward passes for several network sizes.
    Bench {
        /// Variant names (`t`, `s`, `m`, `fadnet++`, `tiny`), `E,D` ratio pairs, or config files.
        #[arg(default_values_t = ["2,1".to_string(), "4,4".into(), "8,8".into(), "16,16".into()])]
        configs: Vec<String>,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Write every timed run as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write synthetic stereo pairs with exact ground truth.
    GenData {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 8.0)]
        max_disparity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Texture::Dots)]
        texture: Texture,
        /// Real-valued instead of integer disparities.
        #[arg(long)]
        subpixel: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Pfm,
    Kitti,
}

impl From<Format> for DisparityFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Pfm => DisparityFormat::Pfm,
            Format::Kitti => DisparityFormat::KittiPng,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Texture {
    Dots,
    Boxes,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out_dir, data_dir, synthetic, seed } => {
            cmd_train(&config, &out_dir, data_dir.as_deref(), synthetic, seed)
        }
        Command::Infer { checkpoint, left, right, out } => cmd_infer(&checkpoint, &left, &right, &out),
        Command::Eval { pred_dir, gt_dir, format, strict, histogram, warp_check } => match warp_check {
            Some(dir) => cmd_warp_check(&dir),
            None => cmd_eval(
                pred_dir.as_deref().expect("clap enforces"),
                gt_dir.as_deref().expect("clap enforces"),
                format.into(),
                strict,
                histogram,
            ),
        },
        Command::Bench { configs, height, width, runs, warmup, csv } => {
            cmd_bench(&configs, height, width, runs, warmup, csv.as_deref())
        }
        Command::GenData { out_dir, count, height, width, max_disparity, seed, texture, subpixel } => {
            let mode = match texture {
                Texture::Dots => TextureMode::Dots,
                Texture::Boxes => TextureMode::Boxes,
            };
            let spec = SyntheticSpec { subpixel, ..SyntheticSpec::new(height, width, max_disparity, mode) };
            cmd_gendata(&out_dir, count, &spec, seed)
        }
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<UsageError>() {
                eprintln!("\nRun `fadnet --help` for usage.");
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn cmd_train(config: &Path, out_dir: &Path, data_dir: Option<&Path>, synthetic: Option<usize>, seed: u64) -> Result<ExitCode> {
    let text = fs::read_to_string(config)
        .map_err(|e| usage(format!("cannot read config {}: {e}", config.display())))?;
    let mut run = RunConfig::parse(&text).map_err(|e| usage(format!("{}: {e:#}", config.display())))?;
    run.network.seed = seed;

    let (train_set, test_set) = match (data_dir, synthetic) {
        (_, Some(0)) => return Err(usage("--synthetic needs at least one pair")),
        (_, Some(n)) => {
            let train = generate_dataset(seed, n, &run.synthetic)?;
            let test = if run.test_count == 0 {
                train.clone()
            } else {
                generate_dataset(seed.wrapping_add(1_000_000), run.test_count, &run.synthetic)?
            };
            (train, test)
        }
        (Some(dir), None) => {
            let entries = read_manifest(dir).map_err(|e| usage(format!("{e:#}")))?;
            let samples = entries.iter().map(load_sample).collect::<Result<Vec<_>>>()?;
            if run.test_count == 0 {
                (samples.clone(), samples)
            } else if run.test_count >= samples.len() {
                return Err(usage(format!(
                    "test_count {} leaves no training samples out of {}",
                    run.test_count,
                    samples.len()
                )));
            } else {
                let split = samples.len() - run.test_count;
                (samples[..split].to_vec(), samples[split..].to_vec())
            }
        }
        (None, None) => unreachable!("clap requires a data source"),
    };

    let mut netc = Network::build_correlation(&run.network, seed)?;
    let mut nets = if run.refine { Some(Network::build_refinement(&run.network, seed.wrapping_add(1))?) } else { None };
    let cfg = TrainConfig { adam: run.adam, batch_size: run.batch_size, seed };
    let log = train_with_progress(&mut netc, nets.as_mut(), &train_set, &test_set, &run.schedule, &cfg, |r| {
        eprintln!(
            "epoch {:>3} round {} loss {:.5} train_epe {:.4} test_epe {:.4}{}",
            r.epoch,
            r.round,
            r.train_loss,
            r.train_epe,
            r.test_epe,
            if r.round_end { "  (round end)" } else { "" }
        );
    })?;

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("training_log.txt"), log.to_text())?;
    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &netc, nets.as_ref())?;
    fs::write(out_dir.join("model.fadw"), ckpt)?;
    if let Some(last) = log.last() {
        println!("final test EPE {:.6} after {} epochs", last.test_epe, last.epoch);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_infer(checkpoint: &Path, left: &Path, right: &Path, out: &Path) -> Result<ExitCode> {
    let bytes = fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let ckpt = read_checkpoint(bytes.as_slice())?;
    let (l, r) = (read_rgb(left)?, read_rgb(right)?);
    if l.shape() != r.shape() {
        return Err(usage(format!(
            "left image is {}x{} but right image is {}x{}",
            l.shape()[2],
            l.shape()[1],
            r.shape()[2],
            r.shape()[1]
        )));
    }
    let pred = predict_disparity(&ckpt.correlation, ckpt.refinement.as_ref(), &l, &r)?;
    let map = DisparityMap::from_tensor(&pred, None)?;
    DisparityFormat::Pfm.write(out, &map)?;
    Ok(ExitCode::SUCCESS)
}

/// Disparity files of `format` in `dir`, by file name. Files of the other format are an error.
fn disparity_files(dir: &Path, format: DisparityFormat) -> Result<BTreeSet<String>> {
    let other = match format {
        DisparityFormat::Pfm => DisparityFormat::KittiPng,
        DisparityFormat::KittiPng => DisparityFormat::Pfm,
    };
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| usage(format!("cannot read {}: {e}", dir.display())))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if ext == other.extension() {
            return Err(usage(format!(
                "mixed formats: {} is not a .{} file",
                path.display(),
                format.extension()
            )));
        }
        if ext == format.extension() {
            names.insert(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

fn cmd_eval(pred_dir: &Path, gt_dir: &Path, format: DisparityFormat, strict: bool, bins: Option<f64>) -> Result<ExitCode> {
    let preds = disparity_files(pred_dir, format)?;
    let gts = disparity_files(gt_dir, format)?;
    let unmatched: Vec<&String> = preds.symmetric_difference(&gts).collect();
    for name in &unmatched {
        let side = if preds.contains(*name) { "ground truth" } else { "prediction" };
        eprintln!("unmatched: {name} has no {side}; excluded");
    }
    let matched: Vec<&String> = preds.intersection(&gts).collect();
    if matched.is_empty() {
        return Err(usage("no matching prediction / ground-truth files"));
    }

    let header = format!(
        "{:<20} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "file", "epe", "d1_all", "bad1", "bad2", "bad3", "bad4", "rms"
    );
    let mut table = format!("{header}\n");
    let mut sums = [0.0; 7];
    let mut gt_maps = Vec::new();
    for name in &matched {
        let pred = format.read(&pred_dir.join(name)).with_context(|| format!("prediction {name}"))?;
        let gt = format.read(&gt_dir.join(name)).with_context(|| format!("ground truth {name}"))?;
        let m = threshold_metrics(&pred, &gt, &DEFAULT_BAD_THRESHOLDS).with_context(|| format!("file {name}"))?;
        let e = epe(&pred, &gt)?;
        let row = [e, m.d1_all, m.bad[0].1, m.bad[1].1, m.bad[2].1, m.bad[3].1, m.rms];
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
        let _ = write!(table, "{name:<20}");
        for v in row {
            let _ = write!(table, " {v:>9.5}");
        }
        table.push('\n');
        gt_maps.push(gt);
    }
    let n = matched.len() as f64;
    let _ = write!(table, "{:<20}", "mean");
    for s in sums {
        let _ = write!(table, " {:>9.5}", s / n);
    }
    println!("{table}");
    // Full precision for scripts comparing against training logs.
    println!("mean_epe {:?}", sums[0] / n);

    if let Some(width) = bins {
        print!("\n{}", disparity_histogram(&gt_maps, width)?.to_table());
    }
    if strict && !unmatched.is_empty() {
        eprintln!("{} unmatched file(s) with --strict", unmatched.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

/// Largest per-sample mean |warp(right, gt) - left| over valid pixels must be ~0.
fn cmd_warp_check(dir: &Path) -> Result<ExitCode> {
    const TOL: f64 = 1e-9;
    let entries = read_manifest(dir).map_err(|e| usage(format!("{e:#}")))?;
    let mut worst: f64 = 0.0;
    for entry in &entries {
        let s = load_sample(entry)?;
        let (h, w) = (s.height(), s.width());
        let g = Graph::new();
        let right = g.constant(as_batch(&s.right)?);
        let disp = g.constant(s.disparity.reshape(&[1, 1, h, w])?);
        let warped = warp_right_to_left(right, disp)?.value();
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, (&a, &b)) in warped.data().iter().zip(s.left.data()).enumerate() {
            if s.valid.data()[i % (h * w)] != 0.0 {
                sum += (a - b).abs();
                count += 1;
            }
        }
        let err = if count == 0 { 0.0 } else { sum / count as f64 };
        println!("{} {err:e}", entry.disparity.display());
        worst = worst.max(err);
    }
    if worst > TOL {
        eprintln!("warp check failed: worst mean error {worst:e} > {TOL:e}");
        return Ok(ExitCode::FAILURE);
    }
    println!("warp check passed on {} samples", entries.len());
    Ok(ExitCode::SUCCESS)
}

fn parse_bench_config(spec: &str) -> Result<NetworkConfig> {
    if let Some((e, d)) = spec.split_once(',') {
        let e = e.trim().parse().map_err(|_| usage(format!("bad ratio pair {spec:?}")))?;
        let d = d.trim().parse().map_err(|_| usage(format!("bad ratio pair {spec:?}")))?;
        return Ok(NetworkConfig::with_ratios(e, d));
    }
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        return RunConfig::parse(&text).map(|r| r.network).map_err(|e| usage(format!("{spec}: {e:#}")));
    }
    NetworkConfig::variant(spec).map_err(|e| usage(e.to_string()))
}

fn cmd_bench(
    configs: &[String],
    height: usize,
    width: usize,
    runs: usize,
    warmup: usize,
    csv: Option<&Path>,
) -> Result<ExitCode> {
    if runs < fadnet_core::bench::MIN_TIMED_RUNS {
        return Err(usage(format!("--runs must be at least {}", fadnet_core::bench::MIN_TIMED_RUNS)));
    }
    let mut reports = Vec::new();
    for spec in configs {
        let cfg = parse_bench_config(spec)?;
        eprintln!("benchmarking {spec} ...");
        reports.push(bench_config(spec, &cfg, height, width, warmup, runs)?);
    }
    print!("{}", reports_table(&reports));
    if let Some(path) = csv {
        fs::write(path, reports_csv(&reports))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gendata(out_dir: &Path, count: usize, spec: &SyntheticSpec, seed: u64) -> Result<ExitCode> {
    if count == 0 {
        return Err(usage("--count must be positive"));
    }
    let samples = generate_dataset(seed, count, spec).map_err(|e| usage(e.to_string()))?;
    write_dataset(out_dir, &samples)?;
    println!("wrote {count} samples to {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}
