//! Forward-pass timing across network configurations.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{count_parameters, forward_fadnet, Network, NetworkConfig};
use crate::tensor::Tensor;
use crate::Graph;

pub const MIN_TIMED_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    /// Wall time of every timed run, seconds.
    pub times: Vec<f64>,
    pub median: f64,
    pub p95: f64,
    pub parameters: usize,
}

/// Nearest-rank percentile of an unsorted sample, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let rank = (q * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Time the full two-stage forward pass on a fixed random `(1, 3, H, W)` pair.
///
/// Warmup runs are executed and discarded before `runs` timed runs.
pub fn bench_config(
    name: &str,
    cfg: &NetworkConfig,
    height: usize,
    width: usize,
    warmup: usize,
    runs: usize,
) -> Result<BenchReport> {
    if runs < MIN_TIMED_RUNS {
        return Err(Error::Config(format!("need at least {MIN_TIMED_RUNS} timed runs, got {runs}")));
    }
    let netc = Network::build_correlation(cfg, cfg.seed)?;
    let nets = Network::build_refinement(cfg, cfg.seed.wrapping_add(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let left = Tensor::uniform(&[1, 3, height, width], 0.0, 1.0, &mut rng);
    let right = Tensor::uniform(&[1, 3, height, width], 0.0, 1.0, &mut rng);

    let run = || -> Result<f64> {
        let start = Instant::now();
        let g = Graph::new();
        let (l, r) = (g.constant(left.clone()), g.constant(right.clone()));
        let out = forward_fadnet(l, r, &netc.bind(&g, false), &nets.bind(&g, false))?;
        std::hint::black_box(out.d_hat[0].value());
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..warmup {
        run()?;
    }
    let times = (0..runs).map(|_| run()).collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        name: name.to_string(),
        height,
        width,
        warmup,
        median: median(&times),
        p95: percentile(&times, 0.95),
        times,
        parameters: count_parameters(cfg)?.total(),
    })
}

/// Aligned plain-text summary, one row per report.
pub fn reports_table(reports: &[BenchReport]) -> String {
    let mut s = format!(
        "{:<12} {:>9} {:>6} {:>5} {:>12} {:>12} {:>12}\n",
        "config", "input", "warmup", "runs", "median_ms", "p95_ms", "params"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12} {:>9} {:>6} {:>5} {:>12.3} {:>12.3} {:>12}",
            r.name,
            format!("{}x{}", r.width, r.height),
            r.warmup,
            r.times.len(),
            r.median * 1e3,
            r.p95 * 1e3,
            r.parameters
        );
    }
    s
}

/// One CSV row per timed run, for plotting.
pub fn reports_csv(reports: &[BenchReport]) -> String {
    let mut s = String::from("config,height,width,run,seconds,parameters\n");
    for r in reports {
        for (i, t) in r.times.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{:?},{}", r.name, r.height, r.width, i, t, r.parameters);
        }
    }
    s
}
