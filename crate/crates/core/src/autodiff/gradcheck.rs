//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Magnitude below which both derivatives are compared absolutely.
const TINY: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub max_rel_error: f64,
    /// `(input, element)` of the worst probe.
    pub worst: Option<(usize, usize)>,
    pub probes: usize,
    pub passed: bool,
}

/// Compare the analytic gradient of `sum(op(inputs))` with central differences
/// at every element of every input.
pub fn check_gradient<F>(op: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradientReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let selection: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    run(&op, inputs, &selection, eps, tol)
}

/// Like [`check_gradient`] but probes at most `per_input` randomly chosen
/// elements of each input, for operators too expensive to probe exhaustively.
pub fn check_gradient_sampled<F>(
    op: F,
    inputs: &[Tensor],
    eps: f64,
    tol: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradientReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selection: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let mut idx = sample(&mut rng, t.len(), per_input.min(t.len())).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    run(&op, inputs, &selection, eps, tol)
}

fn run<F>(
    op: &F,
    inputs: &[Tensor],
    selection: &[Vec<usize>],
    eps: f64,
    tol: f64,
) -> Result<GradientReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    if eps <= 0.0 {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::Contract("gradient check inputs must be finite".into()));
    }

    let analytic: Vec<Tensor> = {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.param(t.clone())).collect();
        op(&g, &vars)?.sum_all().backward()?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };

    let eval = |which: usize, probe: Tensor| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| g.constant(if i == which { probe.clone() } else { t.clone() }))
            .collect();
        op(&g, &vars)?.sum_all().value().item()
    };

    let mut report = GradientReport { max_rel_error: 0.0, worst: None, probes: 0, passed: true };
    for (which, indices) in selection.iter().enumerate() {
        let base = &inputs[which];
        for &index in indices {
            let x = base.data()[index];
            let plus = eval(which, base.with_value(index, x + eps))?;
            let minus = eval(which, base.with_value(index, x - eps))?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NumericalProbe { input: which, index });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic[which].data()[index];
            let err = relative_error(exact, numeric);
            report.probes += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((which, index));
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}

fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if a.abs() < TINY && b.abs() < TINY {
        diff
    } else {
        diff / a.abs().max(b.abs())
    }
}
