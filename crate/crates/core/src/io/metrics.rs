//! Disparity accuracy metrics over jointly valid pixels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::DisparityMap;
use crate::error::{Error, Result};

/// Thresholds reported by default for the `bad-N` columns.
pub const DEFAULT_BAD_THRESHOLDS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

fn joint_errors<'a>(
    pred: &'a DisparityMap,
    gt: &'a DisparityMap,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let any = pred.valid.iter().zip(&gt.valid).any(|(&a, &b)| a && b);
    if !any {
        return Err(Error::Degenerate("no jointly valid pixels".into()));
    }
    Ok((0..pred.values.len()).filter(|&i| pred.valid[i] && gt.valid[i]).map(|i| {
        let g = f64::from(gt.values[i]);
        ((f64::from(pred.values[i]) - g).abs(), g)
    }))
}

/// End-point error: mean absolute disparity difference.
pub fn epe(pred: &DisparityMap, gt: &DisparityMap) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (err, _) in joint_errors(pred, gt)? {
        sum += err;
        n += 1;
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMetrics {
    /// Fraction of pixels whose error exceeds both 3 px and 5% of the ground truth.
    pub d1_all: f64,
    /// `(threshold, fraction with error > threshold)`.
    pub bad: Vec<(f64, f64)>,
    pub rms: f64,
    pub avg_error: f64,
    pub pixels: usize,
}

pub fn threshold_metrics(pred: &DisparityMap, gt: &DisparityMap, thresholds: &[f64]) -> Result<ThresholdMetrics> {
    let mut n = 0usize;
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    let mut d1 = 0usize;
    let mut bad = vec![0usize; thresholds.len()];
    for (err, g) in joint_errors(pred, gt)? {
        n += 1;
        abs_sum += err;
        sq_sum += err * err;
        if err > 3.0 && err > 0.05 * g.abs() {
            d1 += 1;
        }
        for (count, &t) in bad.iter_mut().zip(thresholds) {
            if err > t {
                *count += 1;
            }
        }
    }
    let nf = n as f64;
    Ok(ThresholdMetrics {
        d1_all: d1 as f64 / nf,
        bad: thresholds.iter().zip(bad).map(|(&t, c)| (t, c as f64 / nf)).collect(),
        rms: (sq_sum / nf).sqrt(),
        avg_error: abs_sum / nf,
        pixels: n,
    })
}

/// Counts of valid, non-zero disparities per bin `[k * width, (k + 1) * width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub bins: BTreeMap<i64, u64>,
}

impl Histogram {
    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.bins.values().sum()
    }

    /// `[lo, hi)` span of the occupied bins.
    pub fn support(&self) -> Option<(f64, f64)> {
        let lo = *self.bins.keys().next()?;
        let hi = *self.bins.keys().next_back()?;
        Some((lo as f64 * self.bin_width, (hi + 1) as f64 * self.bin_width))
    }

    /// Tab-separated `lo hi count` rows with a header.
    pub fn to_table(&self) -> String {
        let mut s = String::from("bin_lo\tbin_hi\tcount\n");
        for (&k, &c) in &self.bins {
            let lo = k as f64 * self.bin_width;
            let _ = writeln!(s, "{lo}\t{}\t{c}", lo + self.bin_width);
        }
        s
    }
}

/// Zero disparities are excluded.
pub fn disparity_histogram(maps: &[DisparityMap], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    let mut bins = BTreeMap::new();
    for map in maps {
        for (&v, &ok) in map.values.iter().zip(&map.valid) {
            if ok && v != 0.0 && v.is_finite() {
                *bins.entry((f64::from(v) / bin_width).floor() as i64).or_insert(0) += 1;
            }
        }
    }
    Ok(Histogram { bin_width, bins })
}
