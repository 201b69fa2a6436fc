//! Finite-difference checks of every differentiable operator, plus
//! one-sided directional checks at non-differentiable points.

use fadnet_core::autodiff::check_gradient;
use fadnet_core::network::{forward_fadnet, NetKind, Network, NetworkConfig};
use fadnet_core::ops::{
    conv2d, correlation_patch, correlation_pointwise, leaky_relu, resample, transposed_conv2d, warp_right_to_left,
    ConvSpec, CorrelationSpec, ResampleMode, LEAKY_SLOPE,
};
use fadnet_core::training::{
    generate_synthetic_pair, ground_truth_pyramid, scale_loss, smooth_l1, total_loss, SyntheticSpec, TextureMode,
};
use fadnet_core::{Graph, Result, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{pick, rng, uniform, Check};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 5;

/// Fixed pseudo-random weights so the checked scalar is not a plain sum,
/// which would hide transposition and indexing errors.
fn project<'g>(g: &'g Graph, y: Var<'g>) -> Result<Var<'g>> {
    let w = Tensor::from_fn(&y.shape(), |i| ((i as f64 * 0.618_033_988_75 + 0.31).fract() - 0.5) * 2.0 + 0.05);
    y.mul(g.constant(w))
}

fn report<F>(op: F, inputs: &[Tensor]) -> f64
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    check_gradient(move |g, v| project(g, op(g, v)?), inputs, EPS, TOL).unwrap().max_rel_error
}

/// Run `case` for every seed and keep the worst relative error.
fn over_seeds(name: &'static str, base: u64, mut case: impl FnMut(&mut ChaCha8Rng) -> f64) -> Check {
    let worst = (0..SEEDS).map(|s| case(&mut rng(base * 100 + s))).fold(0.0, f64::max);
    Check::at_most(name, worst, TOL, format!("{SEEDS} seeds, eps {EPS:.0e}"))
}

/// Uniform values bounded away from the kinks at `kinks`.
fn away_from(shape: &[usize], lo: f64, hi: f64, kinks: &[f64], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v = r.gen_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > 0.05) {
            break v;
        }
    })
}

pub fn primitives() -> Check {
    over_seeds("primitives", 1, |r| {
        let a = uniform(&[2, 2, 3, 3], r);
        let b = uniform(&[2, 2, 3, 3], r);
        let one = uniform(&[1, 2, 3, 3], r);
        let signed = away_from(&[2, 2, 3, 3], -1.0, 1.0, &[0.0, 0.2], r);
        let mut worst = report(|_, v| v[0].add(v[1])?.mul(v[1]), &[a.clone(), b.clone()]);
        worst = worst.max(report(|_, v| v[0].sub(v[1])?.scale(-1.7).mul(v[0]), &[a.clone(), b.clone()]));
        worst = worst.max(report(|_, v| v[0].mul(v[1]), &[one.clone(), b.clone()]));
        worst = worst.max(report(|_, v| Ok(v[0].abs()), &[signed.clone()]));
        worst = worst.max(report(|_, v| Ok(v[0].max_scalar(0.2)), &[signed.clone()]));
        worst = worst.max(report(|_, v| v[0].mul(v[0])?.sum(&[1, 3]), &[a.clone()]));
        worst = worst.max(report(|_, v| v[0].mul(v[0])?.mean(&[0, 2]), &[a.clone()]));
        worst = worst.max(report(|g, v| Ok(v[0].mul(v[1])?.sum_all().add(g.constant(Tensor::scalar(1.0)))?), &[a.clone(), b.clone()]));
        worst = worst.max(report(|_, v| Ok(v[0].mul(v[0])?.mean_all()), &[a.clone()]));
        worst = worst.max(report(|_, v| Var::concat(&[v[0], v[1], v[0]], 1), &[a.clone(), b.clone()]));
        worst = worst.max(report(|_, v| v[0].slice(2, 1, 3)?.mul(v[1].slice(2, 0, 2)?), &[a.clone(), b.clone()]));
        worst = worst.max(report(|_, v| v[0].pad2d(1, 0, 2, 1), &[a.clone()]));
        worst.max(report(|_, v| v[0].reshape(&[4, 9])?.mul(v[1].reshape(&[4, 9])?), &[a, b]))
    })
}

pub fn conv() -> Check {
    over_seeds("conv2d", 2, |r| {
        let (ci, co) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let k = pick(r, &[1, 3]);
        let spec = ConvSpec { in_channels: ci, out_channels: co, kernel: k, stride: pick(r, &[1, 2]), padding: r.gen_range(0..=k / 2), transposed: false };
        let inputs = [uniform(&[2, ci, 5, 4], r), uniform(&spec.weight_shape(), r), uniform(&[co], r)];
        report(move |_, v| conv2d(v[0], v[1], Some(v[2]), &spec), &inputs)
    })
}

pub fn transposed_conv() -> Check {
    over_seeds("transposed_conv2d", 3, |r| {
        let (ci, co) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let spec = if r.gen_bool(0.5) {
            ConvSpec::upsample(ci, co)
        } else {
            ConvSpec { in_channels: ci, out_channels: co, kernel: 3, stride: 1, padding: 1, transposed: true }
        };
        let inputs = [uniform(&[2, ci, 3, 2], r), uniform(&spec.weight_shape(), r), uniform(&[co], r)];
        report(move |_, v| transposed_conv2d(v[0], v[1], Some(v[2]), &spec), &inputs)
    })
}

pub fn correlation() -> Check {
    over_seeds("correlation_patch", 4, |r| {
        let spec = CorrelationSpec { max_displacement: r.gen_range(1..=4), kernel: r.gen_range(1..=2) };
        let shape = [2, 2, 4, 6];
        let inputs = [uniform(&shape, r), uniform(&shape, r)];
        report(move |_, v| correlation_patch(v[0], v[1], &spec), &inputs)
    })
}

pub fn pointwise_correlation() -> Check {
    over_seeds("correlation_pointwise", 5, |r| {
        let c = r.gen_range(1..=3);
        let pre = ConvSpec::same(c, c, 3);
        let spec = CorrelationSpec::pointwise(r.gen_range(1..=5));
        let shape = [1, c, 4, 6];
        let inputs = [uniform(&shape, r), uniform(&shape, r), uniform(&pre.weight_shape(), r), uniform(&[c], r)];
        report(move |_, v| correlation_pointwise(v[0], v[1], &spec, &pre, v[2], Some(v[3])), &inputs)
    })
}

pub fn warp() -> Check {
    over_seeds("warp", 6, |r| {
        let (h, w) = (3, 7);
        let img = uniform(&[2, 2, h, w], r);
        // Fractional parts bounded away from integer sample positions.
        let disp = Tensor::from_fn(&[2, 1, h, w], |_| f64::from(r.gen_range(-1..w as i32)) + r.gen_range(0.1..0.9));
        report(|_, v| warp_right_to_left(v[0], v[1]), &[img, disp])
    })
}

pub fn resampling() -> Check {
    over_seeds("resample", 7, |r| {
        let f = pick(r, &[2, 4]);
        let scale = r.gen_range(0.3..3.0);
        let down = uniform(&[2, 2, 2 * f, f], r);
        let up = uniform(&[2, 2, 3, 2], r);
        let a = report(move |_, v| resample(v[0], f, ResampleMode::DownAverage, scale), &[down]);
        a.max(report(move |_, v| resample(v[0], f, ResampleMode::UpBilinear, scale), &[up]))
    })
}

pub fn leaky() -> Check {
    over_seeds("leaky_relu", 8, |r| {
        let x = away_from(&[2, 3, 3, 3], -2.0, 2.0, &[0.0], r);
        report(|_, v| Ok(leaky_relu(v[0], LEAKY_SLOPE)), &[x])
    })
}

pub fn smooth_l1_grad() -> Check {
    over_seeds("smooth_l1", 9, |r| {
        let x = away_from(&[4, 5], -3.0, 3.0, &[-1.0, 1.0], r);
        report(|_, v| Ok(smooth_l1(v[0])), &[x])
    })
}

fn mask(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |i| if i == 0 || r.gen_bool(0.7) { 1.0 } else { 0.0 })
}

/// Ground truth offset from the prediction so no residual sits on a kink.
fn offset_gt(pred: &Tensor, r: &mut ChaCha8Rng) -> Tensor {
    let off = away_from(pred.shape(), -3.0, 3.0, &[-1.0, 0.0, 1.0], r);
    Tensor::from_fn(pred.shape(), |i| pred.data()[i] + off.data()[i])
}

pub fn scale_loss_grad() -> Check {
    over_seeds("scale_loss", 10, |r| {
        let pred = uniform(&[2, 1, 3, 4], r);
        let gt = offset_gt(&pred, r);
        let m = mask(pred.shape(), r);
        report(move |_, v| scale_loss(&gt, v[0], &m), &[pred])
    })
}

pub fn total_loss_grad() -> Check {
    over_seeds("total_loss", 11, |r| {
        let preds: Vec<Tensor> = (0..3).map(|s| uniform(&[1, 1, 8 >> s, 8 >> s], r)).collect();
        let gts: Vec<Tensor> = preds.iter().map(|p| offset_gt(p, r)).collect();
        let masks: Vec<Tensor> = preds.iter().map(|p| mask(p.shape(), r)).collect();
        let weights = [0.5, 0.0, 1.0];
        report(move |g, v| total_loss(g, v, &gts, &masks, &weights), &preds)
    })
}

/// Analytic derivative at element `index` of input `which` must lie between
/// the one-sided difference quotients; returns the size of any violation.
fn subgradient_violation<F>(op: F, inputs: &[Tensor], which: usize, index: usize) -> f64
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let eval = |ins: &[Tensor]| -> f64 {
        let g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        project(&g, op(&g, &vars).unwrap()).unwrap().sum_all().value().item().unwrap()
    };
    let analytic = {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        project(&g, op(&g, &vars).unwrap()).unwrap().sum_all().backward().unwrap();
        vars[which].grad().map_or(0.0, |t| t.data()[index])
    };
    let h = 1e-6;
    let x = inputs[which].data()[index];
    let shifted = |dx: f64| {
        let mut ins = inputs.to_vec();
        ins[which] = ins[which].with_value(index, x + dx);
        eval(&ins)
    };
    let f0 = eval(inputs);
    let right = (shifted(h) - f0) / h;
    let left = (f0 - shifted(-h)) / h;
    let (lo, hi) = (left.min(right) - TOL, left.max(right) + TOL);
    (lo - analytic).max(analytic - hi).max(0.0)
}

pub fn kinks() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(1200);
    for _ in 0..SEEDS {
        let mut x = uniform(&[1, 1, 2, 3], &mut r);
        x = x.with_value(1, 0.0);
        worst = worst.max(subgradient_violation(|_, v| Ok(v[0].abs()), &[x.clone()], 0, 1));
        worst = worst.max(subgradient_violation(|_, v| Ok(leaky_relu(v[0], LEAKY_SLOPE)), &[x.clone()], 0, 1));
        let tie = x.with_value(2, 0.3);
        worst = worst.max(subgradient_violation(|_, v| Ok(v[0].max_scalar(0.3)), &[tie], 0, 2));
        for edge in [1.0, -1.0] {
            let at_edge = x.with_value(3, edge);
            worst = worst.max(subgradient_violation(|_, v| Ok(smooth_l1(v[0])), &[at_edge], 0, 3));
        }
        // Warp sampled exactly on integer positions, including the image border.
        let img = uniform(&[1, 2, 2, 5], &mut r);
        let disp = Tensor::from_fn(&[1, 1, 2, 5], |i| f64::from((i % 5) as i32 - 2));
        for idx in 0..disp.len() {
            worst = worst.max(subgradient_violation(|_, v| warp_right_to_left(v[0], v[1]), &[img.clone(), disp.clone()], 1, idx));
        }
    }
    Check::at_most("kinks (one-sided)", worst, TOL, format!("{SEEDS} seeds"))
}

/// A tiny two-stage network with non-zero refinement heads and a 64x64 pair.
pub fn tiny_model(seed: u64) -> (Network, Network, Tensor, Tensor, Vec<Tensor>, Vec<Tensor>) {
    let cfg = NetworkConfig::tiny();
    let netc = Network::build(&cfg, NetKind::Correlation, seed).unwrap();
    let mut nets = Network::build(&cfg, NetKind::Refinement, seed + 1).unwrap();
    let mut r = rng(seed + 2);
    let params = nets
        .named_params()
        .map(|(name, t)| if name.contains(".head.") { Tensor::uniform(t.shape(), -0.05, 0.05, &mut r) } else { t.clone() })
        .collect();
    nets.set_params(params).unwrap();
    let sample = generate_synthetic_pair(seed, &SyntheticSpec::new(64, 64, 8.0, TextureMode::Dots)).unwrap();
    let batch = |t: &Tensor| Tensor::stack(std::slice::from_ref(t)).unwrap();
    let disp = batch(&sample.disparity);
    let valid = batch(&sample.valid);
    let (gts, masks) = ground_truth_pyramid(&disp, &valid, cfg.scales).unwrap();
    (netc, nets, batch(&sample.left), batch(&sample.right), gts, masks)
}

struct Model {
    netc: Network,
    nets: Network,
    left: Tensor,
    right: Tensor,
    gts: Vec<Tensor>,
    masks: Vec<Tensor>,
}

impl Model {
    /// `mean(d_hat_0)` plus the multi-scale loss on `d_hat`, and the leaves
    /// `[left, right, netC params.., netS params..]`.
    fn objective<'g>(&self, g: &'g Graph, netc: &Network, nets: &Network, left: &Tensor, right: &Tensor, trainable: bool) -> (Var<'g>, Vec<Var<'g>>) {
        let (l, r) = (g.leaf(left.clone(), trainable), g.leaf(right.clone(), trainable));
        let (bc, bs) = (netc.bind(g, trainable), nets.bind(g, trainable));
        let pyr = forward_fadnet(l, r, &bc, &bs).unwrap();
        let weights = vec![1.0; pyr.d_hat.len()];
        let loss = total_loss(g, &pyr.d_hat, &self.gts, &self.masks, &weights).unwrap();
        let f = pyr.d_hat[0].mean_all().add(loss).unwrap();
        let mut leaves = vec![l, r];
        leaves.extend_from_slice(bc.vars());
        leaves.extend_from_slice(bs.vars());
        (f, leaves)
    }

    /// Objective with leaf `leaf`, element `i` shifted by `dx`.
    fn shifted(&self, leaf: usize, i: usize, dx: f64) -> f64 {
        let (mut left, mut right) = (self.left.clone(), self.right.clone());
        let (mut c, mut s) = (self.netc.clone(), self.nets.clone());
        let bump = |t: &Tensor| t.with_value(i, t.data()[i] + dx);
        match leaf {
            0 => left = bump(&left),
            1 => right = bump(&right),
            p => {
                let n_c = c.params().len();
                let (net, k) = if p - 2 < n_c { (&mut c, p - 2) } else { (&mut s, p - 2 - n_c) };
                let mut params = net.params().to_vec();
                params[k] = bump(&params[k]);
                net.set_params(params).unwrap();
            }
        }
        let g = Graph::new();
        self.objective(&g, &c, &s, &left, &right, false).0.value().item().unwrap()
    }
}

/// Outcome of the full-model check: worst error on smooth stencils, worst
/// subgradient violation on stencils straddling a kink, and probe counts.
pub struct EndToEnd {
    pub smooth: Check,
    pub kinked: Check,
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-6 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Sampled central differences through both networks, for the image inputs
/// and the parameters, over several seeds.
///
/// The network has on the order of 1e5 leaky-ReLU and interpolation kinks, so
/// some `±eps` stencils straddle one. Those are recognised by one-sided
/// quotients that disagree by more than the tolerance and are checked
/// directionally (analytic value between the one-sided slopes) instead.
pub fn end_to_end(seeds: u64, probes_per_leaf: usize) -> EndToEnd {
    let (mut smooth, mut kinked) = (0.0f64, 0.0f64);
    let (mut n_smooth, mut n_kinked) = (0, 0);
    for seed in 0..seeds {
        let (netc, nets, left, right, gts, masks) = tiny_model(40 + seed);
        let model = Model { netc, nets, left, right, gts, masks };
        let g = Graph::new();
        let (f, leaves) = model.objective(&g, &model.netc, &model.nets, &model.left, &model.right, true);
        g.zero_grad();
        f.backward().unwrap();
        let f0 = f.value().item().unwrap();
        let grads: Vec<Tensor> = leaves.iter().map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape()))).collect();
        let mut r = rng(900 + seed);
        // Both images, then parameters drawn across the two networks.
        let mut picks: Vec<(usize, usize)> = Vec::new();
        for leaf in [0, 1] {
            picks.extend((0..probes_per_leaf).map(|_| (leaf, r.gen_range(0..grads[leaf].len()))));
        }
        for _ in 0..probes_per_leaf {
            let leaf = r.gen_range(2..grads.len());
            picks.push((leaf, r.gen_range(0..grads[leaf].len())));
        }
        for (leaf, i) in picks {
            let analytic = grads[leaf].data()[i];
            let (fp, fm) = (model.shifted(leaf, i, EPS), model.shifted(leaf, i, -EPS));
            let (fwd, bwd) = ((fp - f0) / EPS, (f0 - fm) / EPS);
            if rel(fwd, bwd) <= TOL {
                n_smooth += 1;
                smooth = smooth.max(rel((fp - fm) / (2.0 * EPS), analytic));
            } else {
                n_kinked += 1;
                let (lo, hi) = (fwd.min(bwd), fwd.max(bwd));
                let slack = TOL * hi.abs().max(lo.abs()).max(1e-6);
                kinked = kinked.max(((lo - slack - analytic).max(analytic - hi - slack)).max(0.0));
            }
        }
    }
    EndToEnd {
        smooth: Check::at_most("end-to-end tiny model", smooth, TOL, format!("{seeds} seeds, {n_smooth} smooth probes")),
        kinked: Check::at_most("end-to-end kinked stencils", kinked, TOL, format!("{n_kinked} probes checked directionally")),
    }
}
