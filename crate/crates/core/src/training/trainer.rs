//! The round-based training loop and inference helpers.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{ground_truth_pyramid, total_loss};
use super::optim::{Adam, AdamConfig};
use super::schedule::LossSchedule;
use super::synthetic::StereoSample;
use crate::error::{Error, Result};
use crate::io::{epe, DisparityMap};
use crate::network::{forward_fadnet, NetKind, Network};
use crate::tensor::Tensor;
use crate::Graph;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Seed for the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), batch_size: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    /// One-based.
    pub round: usize,
    /// Mean weighted loss over the epoch's steps.
    pub train_loss: f64,
    /// Mean full-resolution EPE of the training predictions made during the epoch.
    pub train_epe: f64,
    /// Mean per-sample full-resolution EPE on the test set after the epoch.
    pub test_epe: f64,
    pub round_end: bool,
}

/// Per-epoch records, serialised as whitespace-separated columns under a `#` header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

const LOG_HEADER: &str = "# epoch round train_loss train_epe test_epe round_end";

impl TrainingLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Records that close a round, in order.
    pub fn round_ends(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(|r| r.round_end)
    }

    /// Floats use the shortest representation that parses back exactly.
    pub fn to_text(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{} {} {:?} {:?} {:?} {}",
                r.epoch,
                r.round,
                r.train_loss,
                r.train_epe,
                r.test_epe,
                u8::from(r.round_end)
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let here = offset;
            offset += line.len();
            let body = line.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = body.split_whitespace().collect();
            let bad = |what: &str| Error::format(here, format!("log line {body:?}: {what}"));
            if cols.len() != 6 {
                return Err(bad("expected 6 columns"));
            }
            let int = |i: usize| cols[i].parse::<usize>().map_err(|_| bad("bad integer"));
            let float = |i: usize| cols[i].parse::<f64>().map_err(|_| bad("bad number"));
            records.push(EpochRecord {
                epoch: int(0)?,
                round: int(1)?,
                train_loss: float(2)?,
                train_epe: float(3)?,
                test_epe: float(4)?,
                round_end: match cols[5] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("round_end must be 0 or 1")),
                },
            });
        }
        Ok(Self { records })
    }
}

/// Mirror index into `0..n` (edge pixel not repeated).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let k = i % period;
    if k < n {
        k
    } else {
        period - k
    }
}

/// Pad a `(C, H, W)` tensor on the bottom and right by reflection up to multiples of `multiple`.
pub fn reflect_pad(t: &Tensor, multiple: usize) -> Result<Tensor> {
    let [c, h, w] = *t.shape() else {
        return Err(Error::shape(format!("expected (C, H, W), got {:?}", t.shape())));
    };
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    if (ph, pw) == (h, w) {
        return Ok(t.clone());
    }
    let src = t.data();
    Ok(Tensor::from_fn(&[c, ph, pw], |i| {
        let (ch, y, x) = (i / (ph * pw), i / pw % ph, i % pw);
        src[(ch * h + reflect(y, h)) * w + reflect(x, w)]
    }))
}

/// Top-left `(C, h, w)` window of a `(C, H, W)` tensor.
pub fn crop(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [c, th, tw] = *t.shape() else {
        return Err(Error::shape(format!("expected (C, H, W), got {:?}", t.shape())));
    };
    if h > th || w > tw {
        return Err(Error::shape(format!("cannot crop {th}x{tw} to {h}x{w}")));
    }
    let src = t.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| src[(i / (h * w) * th + i / w % h) * tw + i % w]))
}

/// Full-resolution disparity `(1, H, W)` for one `(3, H, W)` pair, clamped at zero.
///
/// Inputs that are not multiples of the network's divisor are reflect-padded
/// and the prediction is cropped back.
pub fn predict_disparity(netc: &Network, nets: Option<&Network>, left: &Tensor, right: &Tensor) -> Result<Tensor> {
    if left.shape() != right.shape() {
        return Err(Error::shape(format!(
            "left {:?} and right {:?} differ",
            left.shape(),
            right.shape()
        )));
    }
    let [_, h, w] = *left.shape() else {
        return Err(Error::shape(format!("expected (3, H, W) images, got {:?}", left.shape())));
    };
    let div = netc.config().required_divisor();
    let to_batch = |t: &Tensor| -> Result<Tensor> { Tensor::stack(&[reflect_pad(t, div)?]) };
    let g = Graph::new();
    let l = g.constant(to_batch(left)?);
    let r = g.constant(to_batch(right)?);
    let bc = netc.bind(&g, false);
    let d0 = match nets {
        Some(nets) => forward_fadnet(l, r, &bc, &nets.bind(&g, false))?.d_hat[0].value(),
        None => bc.predict(l, r)?[0].value(),
    };
    let shape = d0.shape()[1..].to_vec();
    let plane = d0.reshape(&shape)?;
    Ok(crop(&plane, h, w)?.map(|v| v.max(0.0)))
}

/// EPE of one prediction against a sample's ground truth, at on-disk precision.
pub fn sample_epe(pred: &Tensor, sample: &StereoSample) -> Result<f64> {
    let p = DisparityMap::from_tensor(pred, None)?;
    let gt = DisparityMap::from_tensor(&sample.disparity, Some(&sample.valid))?;
    epe(&p, &gt)
}

/// Mean per-sample EPE.
pub fn evaluate(netc: &Network, nets: Option<&Network>, samples: &[StereoSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Degenerate("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += sample_epe(&predict_disparity(netc, nets, &s.left, &s.right)?, s)?;
    }
    Ok(total / samples.len() as f64)
}

fn check_set(samples: &[StereoSample], divisor: usize, what: &str) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::Degenerate(format!("empty {what} set")))?;
    for (i, s) in samples.iter().enumerate() {
        if s.left.shape() != first.left.shape() {
            return Err(Error::shape(format!("{what} sample {i} has a different size")));
        }
        if s.height() % divisor != 0 || s.width() % divisor != 0 {
            return Err(Error::shape(format!(
                "{what} sample {i} is {}x{}; training needs multiples of {divisor}",
                s.height(),
                s.width()
            )));
        }
    }
    Ok(())
}

/// Train `netc` (and `nets`, when given) through every round of `schedule`.
///
/// With a refinement network the scheduled loss supervises the final
/// predictions `d̂_s = c_s + r_s` and both stages train end to end. Each step
/// builds a fresh tape and clears it before the backward pass.
pub fn train(
    netc: &mut Network,
    nets: Option<&mut Network>,
    train_set: &[StereoSample],
    test_set: &[StereoSample],
    schedule: &LossSchedule,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    train_with_progress(netc, nets, train_set, test_set, schedule, cfg, |_| {})
}

pub fn train_with_progress(
    netc: &mut Network,
    mut nets: Option<&mut Network>,
    train_set: &[StereoSample],
    test_set: &[StereoSample],
    schedule: &LossSchedule,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingLog> {
    if netc.kind() != NetKind::Correlation || nets.as_ref().is_some_and(|n| n.kind() != NetKind::Refinement) {
        return Err(Error::Contract("train() takes a correlation and an optional refinement network".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let scales = netc.config().scales;
    schedule.validate(scales)?;
    let div = netc.config().required_divisor();
    check_set(train_set, div, "training")?;
    check_set(test_set, div, "test")?;

    let pyramids = train_set
        .iter()
        .map(|s| {
            let (h, w) = (s.height(), s.width());
            ground_truth_pyramid(&s.disparity.reshape(&[1, 1, h, w])?, &s.valid.reshape(&[1, 1, h, w])?, scales)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_c = netc.params().len();
    let mut all: Vec<Tensor> = netc.params().to_vec();
    if let Some(s) = nets.as_deref() {
        all.extend_from_slice(s.params());
    }
    let mut opt = Adam::new(cfg.adam, &all);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainingLog::default();
    let mut epoch = 0;

    for (round_idx, round) in schedule.rounds.iter().enumerate() {
        for e in 0..round.epochs {
            epoch += 1;
            order.shuffle(&mut rng);
            let (mut loss_sum, mut epe_sum) = (0.0, 0.0);
            let mut steps = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let stack = |f: &dyn Fn(&StereoSample) -> &Tensor| -> Result<Tensor> {
                    Tensor::stack(&chunk.iter().map(|&i| f(&train_set[i]).clone()).collect::<Vec<_>>())
                };
                let per_scale = |pick: &dyn Fn(&(Vec<Tensor>, Vec<Tensor>)) -> &Vec<Tensor>| -> Result<Vec<Tensor>> {
                    (0..scales)
                        .map(|s| {
                            let items: Vec<Tensor> = chunk
                                .iter()
                                .map(|&i| pick(&pyramids[i])[s].clone())
                                .collect();
                            let dims = items[0].shape();
                            let plane = [1, dims[dims.len() - 2], dims[dims.len() - 1]];
                            Tensor::stack(&items.iter().map(|t| t.reshape(&plane)).collect::<Result<Vec<_>>>()?)
                        })
                        .collect()
                };
                let gts = per_scale(&|p| &p.0)?;
                let masks = per_scale(&|p| &p.1)?;

                let g = Graph::new();
                let left = g.constant(stack(&|s| &s.left)?);
                let right = g.constant(stack(&|s| &s.right)?);
                let bc = netc.bind(&g, true);
                let bs = nets.as_deref().map(|n| n.bind(&g, true));
                let (loss, d0) = match &bs {
                    Some(bs) => {
                        let pyr = forward_fadnet(left, right, &bc, bs)?;
                        (total_loss(&g, &pyr.d_hat, &gts, &masks, &round.weights)?, pyr.d_hat[0])
                    }
                    None => {
                        let c = bc.predict(left, right)?;
                        (total_loss(&g, &c, &gts, &masks, &round.weights)?, c[0])
                    }
                };
                let value = loss.value().item()?;
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch, sample: chunk[0], loss: value });
                }
                let d0 = d0.value();
                let plane = d0.len() / chunk.len();
                for (k, &i) in chunk.iter().enumerate() {
                    let pred = Tensor::new(
                        &[1, d0.shape()[2], d0.shape()[3]],
                        d0.data()[k * plane..(k + 1) * plane].iter().map(|v| v.max(0.0)).collect(),
                    )?;
                    epe_sum += sample_epe(&pred, &train_set[i])?;
                }
                loss_sum += value;
                steps += 1;

                g.zero_grad();
                loss.backward()?;
                let mut grads: Vec<Option<Tensor>> = bc.vars().iter().map(|v| v.grad()).collect();
                if let Some(bs) = &bs {
                    grads.extend(bs.vars().iter().map(|v| v.grad()));
                }
                drop(bs);
                drop(bc);
                all = opt.step(&all, &grads)?;
                netc.set_params(all[..n_c].to_vec())?;
                if let Some(s) = nets.as_deref_mut() {
                    s.set_params(all[n_c..].to_vec())?;
                }
            }
            let record = EpochRecord {
                epoch,
                round: round_idx + 1,
                train_loss: loss_sum / steps as f64,
                train_epe: epe_sum / train_set.len() as f64,
                test_epe: evaluate(netc, nets.as_deref(), test_set)?,
                round_end: e + 1 == round.epochs,
            };
            on_epoch(&record);
            log.records.push(record);
        }
    }
    Ok(log)
}
