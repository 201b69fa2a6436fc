//! Multi-scale smooth-L1 supervision.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::ops::{resample, ResampleMode};
use crate::tensor::Tensor;
use crate::Graph;

/// `0.5 x^2` for `|x| < 1`, `|x| - 0.5` otherwise; continuous with its derivative at `|x| = 1`.
pub fn smooth_l1(x: Var<'_>) -> Var<'_> {
    x.unary(
        "smooth_l1",
        |v| if v.abs() < 1.0 { 0.5 * v * v } else { v.abs() - 0.5 },
        |v, g| {
            if v.abs() < 1.0 {
                g * v
            } else {
                g * v.signum()
            }
        },
    )
}

/// Mean smooth-L1 error between `gt` and `pred` over pixels where `mask` is non-zero.
pub fn scale_loss<'g>(gt: &Tensor, pred: Var<'g>, mask: &Tensor) -> Result<Var<'g>> {
    if gt.shape() != pred.shape().as_slice() || mask.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "scale loss operands {:?}, {:?}, mask {:?}",
            gt.shape(),
            pred.shape(),
            mask.shape()
        )));
    }
    let valid = mask.data().iter().filter(|&&m| m != 0.0).count();
    if valid == 0 {
        return Err(Error::Degenerate("no valid pixels in the loss mask".into()));
    }
    let graph = pred.graph();
    let diff = graph.constant(gt.clone()).sub(pred)?;
    let masked = smooth_l1(diff).mul(graph.constant(mask.clone()))?;
    Ok(masked.sum_all().scale(1.0 / valid as f64))
}

/// `sum_s w_s * L_s`; scales with zero weight are skipped entirely.
pub fn total_loss<'g>(
    graph: &'g Graph,
    predictions: &[Var<'g>],
    gt_pyramid: &[Tensor],
    masks: &[Tensor],
    weights: &[f64],
) -> Result<Var<'g>> {
    if weights.len() != predictions.len()
        || gt_pyramid.len() != predictions.len()
        || masks.len() != predictions.len()
    {
        return Err(Error::Config(format!(
            "{} weights, {} predictions, {} ground-truth maps, {} masks",
            weights.len(),
            predictions.len(),
            gt_pyramid.len(),
            masks.len()
        )));
    }
    let mut total: Option<Var<'g>> = None;
    for (s, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let term = scale_loss(&gt_pyramid[s], predictions[s], &masks[s])?.scale(w);
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| graph.constant(Tensor::scalar(0.0))))
}

/// Ground truth and validity at scales `0..scales`.
///
/// Each coarse pixel averages the valid fine pixels under it and is divided
/// by `2^s` so disparities stay in pixels of their own scale; it is valid
/// when at least one fine pixel is.
pub fn ground_truth_pyramid(
    disparity: &Tensor,
    mask: &Tensor,
    scales: usize,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    if disparity.shape() != mask.shape() {
        return Err(Error::shape("ground truth and mask shapes differ"));
    }
    let g = Graph::new();
    let m = g.constant(mask.map(|v| if v != 0.0 { 1.0 } else { 0.0 }));
    let dm = g.constant(disparity.clone()).mul(m)?;
    let mut gts = vec![disparity.clone()];
    let mut masks = vec![mask.clone()];
    for s in 1..scales {
        let f = 1usize << s;
        let num = resample(dm, f, ResampleMode::DownAverage, 1.0)?.value();
        let den = resample(m, f, ResampleMode::DownAverage, 1.0)?.value();
        let gt = num
            .data()
            .iter()
            .zip(den.data())
            .map(|(&n, &d)| if d > 0.0 { n / d / f as f64 } else { 0.0 })
            .collect();
        gts.push(Tensor::new(num.shape(), gt)?);
        masks.push(den.map(|d| if d > 0.0 { 1.0 } else { 0.0 }));
    }
    gts.truncate(scales);
    masks.truncate(scales);
    Ok((gts, masks))
}
