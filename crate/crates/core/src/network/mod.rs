//! The two-stage residual stereo network.
//!
//! Both stages share one layout: an encoder of Dual-ResBlock stages (a
//! stride-1 residual block followed by a downsampling residual block) and a
//! U-shaped decoder that emits one disparity map per scale, finest first.
//!
//! * The correlation network runs its first `corr_level` stages on each view
//!   separately with shared weights, builds a point-wise cost volume and
//!   continues on `[left features, cost volume]`.
//! * The refinement network sees `[left, right, warped left, initial disparity]`
//!   and predicts residuals; its heads start at zero.

mod checkpoint;
mod config;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{
    ConfigFile, NetworkConfig, DEFAULT_DECODER_CHANNELS, DEFAULT_ENCODER_CHANNELS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::{
    conv2d, correlation_pointwise, leaky_relu, resample, transposed_conv2d, warp_right_to_left,
    ConvSpec, CorrelationSpec, ResampleMode, LEAKY_SLOPE,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    /// First stage: predicts disparities `c_s` from a cost volume.
    Correlation,
    /// Second stage: predicts residuals `r_s`.
    Refinement,
}

impl NetKind {
    pub fn prefix(self) -> &'static str {
        match self {
            NetKind::Correlation => "netc",
            NetKind::Refinement => "nets",
        }
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    spec: ConvSpec,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: ConvLayer,
    conv2: ConvLayer,
    shortcut: Option<ConvLayer>,
}

#[derive(Debug, Clone)]
struct Stage {
    keep: ResBlock,
    down: ResBlock,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    /// Absent at the coarsest scale, which reads the encoder output directly.
    upconv: Option<ConvLayer>,
    iconv: ConvLayer,
    head: ConvLayer,
}

#[derive(Debug, Clone)]
struct CostVolume {
    pre: ConvLayer,
    spec: CorrelationSpec,
    /// Cost values are divided by the feature channel count.
    norm: f64,
}

#[derive(Debug, Clone)]
struct Layout {
    stages: Vec<Stage>,
    cost_volume: Option<CostVolume>,
    decoder: Vec<DecoderStage>,
}

/// Name and shape of every parameter in build order.
pub type ParamPlan = Vec<(String, Vec<usize>)>;

struct Planner {
    params: ParamPlan,
    // Layers whose weights start at zero.
    zero: Vec<bool>,
}

impl Planner {
    fn conv(&mut self, name: String, spec: ConvSpec, zero_init: bool) -> ConvLayer {
        let weight = self.params.len();
        self.params.push((format!("{name}.weight"), spec.weight_shape().to_vec()));
        self.params.push((format!("{name}.bias"), vec![spec.out_channels]));
        self.zero.push(zero_init);
        self.zero.push(true);
        ConvLayer { spec, weight, bias: weight + 1 }
    }

    fn res_block(&mut self, name: &str, cin: usize, cout: usize, stride: usize) -> ResBlock {
        let conv1 = self.conv(format!("{name}.conv1"), ConvSpec::strided(cin, cout, 3, stride), false);
        let conv2 = self.conv(format!("{name}.conv2"), ConvSpec::same(cout, cout, 3), false);
        let shortcut = (cin != cout || stride != 1)
            .then(|| self.conv(format!("{name}.shortcut"), ConvSpec::strided(cin, cout, 1, stride), false));
        ResBlock { conv1, conv2, shortcut }
    }
}

fn plan(cfg: &NetworkConfig, kind: NetKind) -> (Layout, ParamPlan, Vec<bool>) {
    let mut p = Planner { params: Vec::new(), zero: Vec::new() };
    let mut stages = Vec::with_capacity(cfg.encoder_stages);
    let mut cost_volume = None;
    let mut cin = match kind {
        NetKind::Correlation => cfg.image_channels,
        NetKind::Refinement => cfg.refinement_input_channels(),
    };
    for k in 0..cfg.encoder_stages {
        if kind == NetKind::Correlation && k == cfg.corr_level {
            let pre = p.conv("corr.pre".into(), ConvSpec::same(cin, cin, 3), false);
            cost_volume = Some(CostVolume {
                pre,
                spec: CorrelationSpec::pointwise(cfg.search_range),
                norm: 1.0 / cin as f64,
            });
            cin += cfg.search_range;
        }
        let width = cfg.encoder_width(k);
        let stride = if k + 1 < cfg.scales { 2 } else { 1 };
        let keep = p.res_block(&format!("enc{}.keep", k + 1), cin, width, 1);
        let down = p.res_block(&format!("enc{}.down", k + 1), width, width, stride);
        stages.push(Stage { keep, down });
        cin = width;
    }

    // Skip features at scale s: the full-resolution block for s = 0, else stage s.
    let skip_width = |s: usize| cfg.encoder_width(s.saturating_sub(1));
    let last = cfg.scales - 1;
    let mut decoder: Vec<Option<DecoderStage>> = vec![None; cfg.scales];
    let mut prev = cfg.encoder_width(cfg.encoder_stages - 1);
    for s in (0..cfg.scales).rev() {
        let width = cfg.decoder_width(s);
        let (upconv, iconv_in) = if s == last {
            (None, prev)
        } else {
            let up = p.conv(format!("dec{s}.upconv"), ConvSpec::upsample(prev, width), false);
            (Some(up), width + skip_width(s) + 1)
        };
        let iconv = p.conv(format!("dec{s}.iconv"), ConvSpec::same(iconv_in, width, 3), false);
        let head = p.conv(format!("dec{s}.head"), ConvSpec::same(width, 1, 3), kind == NetKind::Refinement);
        decoder[s] = Some(DecoderStage { upconv, iconv, head });
        prev = width;
    }
    let decoder = decoder.into_iter().map(|d| d.expect("every scale planned")).collect();
    (Layout { stages, cost_volume, decoder }, p.params, p.zero)
}

/// Parameter totals for a configuration, without allocating any weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub correlation: usize,
    pub refinement: usize,
    /// `(prefixed name, element count)` for every parameter tensor.
    pub layers: Vec<(String, usize)>,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.correlation + self.refinement
    }
}

/// Exact parameter count of the correlation plus refinement networks under `cfg`.
pub fn count_parameters(cfg: &NetworkConfig) -> Result<ParamCount> {
    cfg.validate()?;
    let mut layers = Vec::new();
    let mut totals = [0usize; 2];
    for (i, kind) in [NetKind::Correlation, NetKind::Refinement].into_iter().enumerate() {
        let (_, params, _) = plan(cfg, kind);
        for (name, shape) in params {
            let n: usize = shape.iter().product();
            totals[i] += n;
            layers.push((format!("{}.{name}", kind.prefix()), n));
        }
    }
    Ok(ParamCount { correlation: totals[0], refinement: totals[1], layers })
}

#[derive(Debug, Clone)]
pub struct Network {
    kind: NetKind,
    cfg: NetworkConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Network {
    /// Build with weights drawn deterministically from `seed`.
    ///
    /// Weights are zero-mean normal with standard deviation `sqrt(2 / fan_in)`;
    /// biases and the refinement heads start at zero.
    pub fn build(cfg: &NetworkConfig, kind: NetKind, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (layout, plan, zero) = plan(cfg, kind);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(plan.len());
        let mut params = Vec::with_capacity(plan.len());
        for ((name, shape), zero) in plan.into_iter().zip(zero) {
            let tensor = if zero {
                Tensor::zeros(&shape)
            } else {
                Tensor::randn(&shape, (2.0 / fan_in(&name, &shape) as f64).sqrt(), &mut rng)
            };
            names.push(name);
            params.push(tensor);
        }
        Ok(Self { kind, cfg: cfg.clone(), layout, names, params })
    }

    pub fn build_correlation(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, NetKind::Correlation, seed)
    }

    pub fn build_refinement(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, NetKind::Refinement, seed)
    }

    /// Rebuild from named tensors, e.g. a checkpoint section.
    pub fn from_params(cfg: &NetworkConfig, kind: NetKind, named: Vec<(String, Tensor)>) -> Result<Self> {
        cfg.validate()?;
        let (layout, plan, _) = plan(cfg, kind);
        if named.len() != plan.len() {
            return Err(Error::Config(format!(
                "{} network needs {} parameter tensors, got {}",
                kind.prefix(),
                plan.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(plan.len());
        let mut params = Vec::with_capacity(plan.len());
        for ((name, shape), (got_name, tensor)) in plan.into_iter().zip(named) {
            if name != got_name || tensor.shape() != shape {
                return Err(Error::Config(format!(
                    "expected parameter {name} {shape:?}, found {got_name} {:?}",
                    tensor.shape()
                )));
            }
            names.push(name);
            params.push(tensor);
        }
        Ok(Self { kind, cfg: cfg.clone(), layout, names, params })
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("replacement parameters do not match the network"));
        }
        self.params = params;
        Ok(())
    }

    /// Insert the parameters into `graph` as leaves.
    pub fn bind<'n, 'g>(&'n self, graph: &'g Graph, trainable: bool) -> Bound<'n, 'g> {
        let vars = self.params.iter().map(|p| graph.leaf(p.clone(), trainable)).collect();
        Bound { net: self, graph, vars }
    }
}

fn fan_in(name: &str, shape: &[usize]) -> usize {
    if name.contains("upconv") {
        // A stride-2 transposed conv feeds each output from a quarter of its taps.
        (shape[0] * shape[2] * shape[3] / 4).max(1)
    } else {
        shape[1..].iter().product()
    }
}

/// Map `[0, 1]` intensities to `[-1, 1]` so matching costs are not dominated by the mean.
fn center(x: Var<'_>) -> Var<'_> {
    x.unary("center", |v| 2.0 * v - 1.0, |_, g| 2.0 * g)
}

/// A network whose parameters live in a particular graph.
pub struct Bound<'n, 'g> {
    net: &'n Network,
    graph: &'g Graph,
    vars: Vec<Var<'g>>,
}

impl<'n, 'g> Bound<'n, 'g> {
    pub fn network(&self) -> &'n Network {
        self.net
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }

    fn conv(&self, layer: &ConvLayer, x: Var<'g>) -> Result<Var<'g>> {
        let (w, b) = (self.vars[layer.weight], Some(self.vars[layer.bias]));
        if layer.spec.transposed {
            transposed_conv2d(x, w, b, &layer.spec)
        } else {
            conv2d(x, w, b, &layer.spec)
        }
    }

    fn res_block(&self, block: &ResBlock, x: Var<'g>) -> Result<Var<'g>> {
        let y = leaky_relu(self.conv(&block.conv1, x)?, LEAKY_SLOPE);
        let y = self.conv(&block.conv2, y)?;
        let shortcut = match &block.shortcut {
            Some(layer) => self.conv(layer, x)?,
            None => x,
        };
        Ok(leaky_relu(y.add(shortcut)?, LEAKY_SLOPE))
    }

    /// Returns `(full-resolution features, stage output)`.
    fn stage(&self, stage: &Stage, x: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let keep = self.res_block(&stage.keep, x)?;
        let down = self.res_block(&stage.down, keep)?;
        Ok((keep, down))
    }

    fn check_input(&self, x: Var<'g>, channels: usize) -> Result<()> {
        let shape = x.shape();
        let div = self.net.cfg.required_divisor();
        match shape[..] {
            [_, c, h, w] if c == channels => {
                if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
                    return Err(Error::shape(format!(
                        "input extents {h}x{w} must be non-zero multiples of {div}"
                    )));
                }
                Ok(())
            }
            _ => Err(Error::shape(format!(
                "expected (b, {channels}, h, w) input, got {shape:?}"
            ))),
        }
    }

    /// Encoder stages from `first` onwards, collecting skip features.
    fn encode_from(&self, first: usize, mut x: Var<'g>, skips: &mut Vec<Var<'g>>) -> Result<Var<'g>> {
        for (k, stage) in self.net.layout.stages.iter().enumerate().skip(first) {
            let (keep, down) = self.stage(stage, x)?;
            if k == 0 {
                skips.push(keep);
            }
            skips.push(down);
            x = down;
        }
        Ok(x)
    }

    fn decode(&self, bottom: Var<'g>, skips: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        let scales = self.net.cfg.scales;
        let mut preds: Vec<Option<Var<'g>>> = vec![None; scales];
        let mut feat = bottom;
        for s in (0..scales).rev() {
            let stage = &self.net.layout.decoder[s];
            let x = match &stage.upconv {
                None => feat,
                Some(up) => {
                    let up = leaky_relu(self.conv(up, feat)?, LEAKY_SLOPE);
                    let coarse = preds[s + 1].expect("coarser scale decoded first");
                    let coarse = resample(coarse, 2, ResampleMode::UpBilinear, 2.0)?;
                    Var::concat_channels(&[up, skips[s], coarse])?
                }
            };
            feat = leaky_relu(self.conv(&stage.iconv, x)?, LEAKY_SLOPE);
            preds[s] = Some(self.conv(&stage.head, feat)?);
        }
        Ok(preds.into_iter().map(|p| p.expect("every scale decoded")).collect())
    }

    /// First-stage disparities `c_s`, finest first.
    pub fn predict(&self, left: Var<'g>, right: Var<'g>) -> Result<Vec<Var<'g>>> {
        if self.net.kind != NetKind::Correlation {
            return Err(Error::Contract("predict() needs the correlation network".into()));
        }
        let cfg = &self.net.cfg;
        self.check_input(left, cfg.image_channels)?;
        self.check_input(right, cfg.image_channels)?;
        if left.shape() != right.shape() {
            return Err(Error::shape(format!(
                "left {:?} and right {:?} differ",
                left.shape(),
                right.shape()
            )));
        }
        let layout = &self.net.layout;
        let cv = layout.cost_volume.as_ref().expect("correlation network has a cost volume");

        let mut skips = Vec::with_capacity(cfg.scales + 1);
        let (mut l, mut r) = (center(left), center(right));
        for (k, stage) in layout.stages.iter().enumerate().take(cfg.corr_level) {
            let (keep, down) = self.stage(stage, l)?;
            let (_, down_r) = self.stage(stage, r)?;
            if k == 0 {
                skips.push(keep);
            }
            skips.push(down);
            l = down;
            r = down_r;
        }
        let cost = correlation_pointwise(
            l,
            r,
            &cv.spec,
            &cv.pre.spec,
            self.vars[cv.pre.weight],
            Some(self.vars[cv.pre.bias]),
        )?
        .scale(cv.norm);
        let merged = Var::concat_channels(&[l, leaky_relu(cost, LEAKY_SLOPE)])?;
        let bottom = self.encode_from(cfg.corr_level, merged, &mut skips)?;
        self.decode(bottom, &skips)
    }

    /// Second-stage residuals `r_s`, finest first.
    pub fn predict_residual(
        &self,
        left: Var<'g>,
        right: Var<'g>,
        warped_left: Var<'g>,
        initial: Var<'g>,
    ) -> Result<Vec<Var<'g>>> {
        if self.net.kind != NetKind::Refinement {
            return Err(Error::Contract("predict_residual() needs the refinement network".into()));
        }
        let input = Var::concat_channels(&[center(left), center(right), center(warped_left), initial])?;
        self.check_input(input, self.net.cfg.refinement_input_channels())?;
        let mut skips = Vec::with_capacity(self.net.cfg.scales + 1);
        let bottom = self.encode_from(0, input, &mut skips)?;
        self.decode(bottom, &skips)
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }
}

/// Multi-scale outputs of a full forward pass, finest scale first.
pub struct DisparityPyramid<'g> {
    /// First-stage predictions.
    pub c: Vec<Var<'g>>,
    /// Second-stage residuals.
    pub r: Vec<Var<'g>>,
    /// Final predictions `c_s + r_s`.
    pub d_hat: Vec<Var<'g>>,
    pub warped_left: Var<'g>,
}

/// Run both stages: predict `c`, warp the right view with `c_0`, predict
/// residuals and accumulate them per scale.
pub fn forward_fadnet<'g>(
    left: Var<'g>,
    right: Var<'g>,
    netc: &Bound<'_, 'g>,
    nets: &Bound<'_, 'g>,
) -> Result<DisparityPyramid<'g>> {
    let c = netc.predict(left, right)?;
    let warped_left = warp_right_to_left(right, c[0])?;
    let r = nets.predict_residual(left, right, warped_left, c[0])?;
    if r.len() != c.len() {
        return Err(Error::Config("stages disagree on the scale count".into()));
    }
    let d_hat = c.iter().zip(&r).map(|(&c, &r)| c.add(r)).collect::<Result<Vec<_>>>()?;
    Ok(DisparityPyramid { c, r, d_hat, warped_left })
}
