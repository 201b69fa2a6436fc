//! Independent naive-loop reference implementations, compared against the
//! library on random small instances.

use fadnet_core::io::{epe, threshold_metrics, DisparityMap};
use fadnet_core::ops::{
    conv2d, correlation_patch, correlation_pointwise, resample, transposed_conv2d, warp_right_to_left,
    ConvSpec, CorrelationSpec, ResampleMode,
};
use fadnet_core::training::{scale_loss, smooth_l1, total_loss};
use fadnet_core::{Graph, Tensor};
use rand::Rng;

use super::{index4, pick, rng, uniform, Check};

pub const INSTANCES: usize = 24;
pub const TOL: f64 = 1e-9;
pub const TOL_REDUCTION: f64 = 1e-12;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "oracle and library disagree on output size");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn at(t: &Tensor, n: usize, c: usize, y: isize, x: isize) -> f64 {
    let s = t.shape();
    if y < 0 || x < 0 || y as usize >= s[2] || x as usize >= s[3] {
        0.0
    } else {
        t.data()[index4(s, n, c, y as usize, x as usize)]
    }
}

fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], k: usize, stride: usize, pad: usize) -> Tensor {
    let [n, ci, h, wd] = *x.shape() else { unreachable!() };
    let co = w.shape()[0];
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    let oshape = [n, co, oh, ow];
    for b_ in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                acc += w.data()[((o * ci + c) * k + ky) * k + kx] * at(x, b_, c, iy, ix);
                            }
                        }
                    }
                    out[index4(&oshape, b_, o, y, xx)] = acc;
                }
            }
        }
    }
    Tensor::new(&oshape, out).unwrap()
}

pub fn conv2d_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(101);
    for _ in 0..INSTANCES {
        let (n, ci, co) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
        let k = pick(&mut r, &[1, 3, 5]);
        let stride = pick(&mut r, &[1, 2]);
        let pad = r.gen_range(0..=k / 2);
        let (h, w) = (r.gen_range(k..=k + 5), r.gen_range(k..=k + 5));
        let spec = ConvSpec { in_channels: ci, out_channels: co, kernel: k, stride, padding: pad, transposed: false };
        let x = uniform(&[n, ci, h, w], &mut r);
        let wt = uniform(&spec.weight_shape(), &mut r);
        let b = uniform(&[co], &mut r);
        let g = Graph::new();
        let got = conv2d(g.constant(x.clone()), g.constant(wt.clone()), Some(g.constant(b.clone())), &spec).unwrap();
        worst = worst.max(max_diff(got.value().data(), naive_conv(&x, &wt, b.data(), k, stride, pad).data()));
    }
    Check::at_most("conv2d", worst, TOL, format!("{INSTANCES} instances"))
}

pub fn transposed_conv2d_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(102);
    for _ in 0..INSTANCES {
        let (n, ci, co) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
        let k = pick(&mut r, &[2, 3, 4]);
        let stride = pick(&mut r, &[1, 2]);
        let pad = r.gen_range(0..k.min(2));
        let (h, w) = (r.gen_range(1..=5), r.gen_range(1..=5));
        let spec = ConvSpec { in_channels: ci, out_channels: co, kernel: k, stride, padding: pad, transposed: true };
        let x = uniform(&[n, ci, h, w], &mut r);
        let wt = uniform(&spec.weight_shape(), &mut r);
        let b = uniform(&[co], &mut r);
        let g = Graph::new();
        let got = match transposed_conv2d(g.constant(x.clone()), g.constant(wt.clone()), Some(g.constant(b.clone())), &spec) {
            Ok(v) => v.value(),
            Err(_) => continue, // extent collapsed to zero
        };
        // Scatter every input pixel through the kernel.
        let (oh, ow) = ((h - 1) * stride + k - 2 * pad, (w - 1) * stride + k - 2 * pad);
        let oshape = [n, co, oh, ow];
        let mut out = vec![0.0; n * co * oh * ow];
        for b_ in 0..n {
            for o in 0..co {
                for y in 0..oh {
                    for xx in 0..ow {
                        out[index4(&oshape, b_, o, y, xx)] = b.data()[o];
                    }
                }
            }
            for c in 0..ci {
                for y in 0..h {
                    for xx in 0..w {
                        let v = x.data()[index4(x.shape(), b_, c, y, xx)];
                        for o in 0..co {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let oy = (y * stride + ky) as isize - pad as isize;
                                    let ox = (xx * stride + kx) as isize - pad as isize;
                                    if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                        out[index4(&oshape, b_, o, oy as usize, ox as usize)] +=
                                            v * wt.data()[((c * co + o) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(got.shape(), oshape);
        worst = worst.max(max_diff(got.data(), &out));
    }
    Check::at_most("transposed_conv2d", worst, TOL, format!("{INSTANCES} instances"))
}

fn naive_correlation(f1: &Tensor, f2: &Tensor, d: usize, k: usize) -> Vec<f64> {
    let [n, c, h, w] = *f1.shape() else { unreachable!() };
    let oshape = [n, d, h, w];
    let mut out = vec![0.0; n * d * h * w];
    for b in 0..n {
        for j in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for oy in -(k as isize)..=k as isize {
                        for ox in -(k as isize)..=k as isize {
                            let (py, px) = (y as isize + oy, x as isize + ox);
                            // Both the left sample and its shifted partner must lie inside the image.
                            if py < 0 || px < 0 || py >= h as isize || px >= w as isize || px - (j as isize) < 0 {
                                continue;
                            }
                            for ch in 0..c {
                                acc += at(f1, b, ch, py, px) * at(f2, b, ch, py, px - j as isize);
                            }
                        }
                    }
                    out[index4(&oshape, b, j, y, x)] = acc;
                }
            }
        }
    }
    out
}

pub fn correlation_patch_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(103);
    for _ in 0..INSTANCES {
        let shape = [r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=6), r.gen_range(1..=8)];
        let (d, k) = (r.gen_range(1..=5), r.gen_range(0..=2));
        let (a, b) = (uniform(&shape, &mut r), uniform(&shape, &mut r));
        let g = Graph::new();
        let spec = CorrelationSpec { max_displacement: d, kernel: k };
        let got = correlation_patch(g.constant(a.clone()), g.constant(b.clone()), &spec).unwrap();
        worst = worst.max(max_diff(got.value().data(), &naive_correlation(&a, &b, d, k)));
    }
    Check::at_most("correlation_patch", worst, TOL, format!("{INSTANCES} instances"))
}

pub fn correlation_pointwise_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(104);
    for _ in 0..INSTANCES {
        let c = r.gen_range(1..=3);
        let shape = [r.gen_range(1..=2), c, r.gen_range(1..=6), r.gen_range(2..=8)];
        let d = r.gen_range(1..=5);
        let (a, b) = (uniform(&shape, &mut r), uniform(&shape, &mut r));
        let pre = ConvSpec::same(c, c, 3);
        let wt = uniform(&pre.weight_shape(), &mut r);
        let bias = uniform(&[c], &mut r);
        let g = Graph::new();
        let got = correlation_pointwise(
            g.constant(a.clone()),
            g.constant(b.clone()),
            &CorrelationSpec::pointwise(d),
            &pre,
            g.constant(wt.clone()),
            Some(g.constant(bias.clone())),
        )
        .unwrap();
        let pa = naive_conv(&a, &wt, bias.data(), 3, 1, 1);
        let pb = naive_conv(&b, &wt, bias.data(), 3, 1, 1);
        worst = worst.max(max_diff(got.value().data(), &naive_correlation(&pa, &pb, d, 0)));
    }
    Check::at_most("correlation_pointwise", worst, TOL, format!("{INSTANCES} instances"))
}

pub fn warp_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(105);
    for _ in 0..INSTANCES {
        let (n, c, h, w) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(2..=9));
        let img = uniform(&[n, c, h, w], &mut r);
        let disp = Tensor::uniform(&[n, 1, h, w], -1.0, w as f64, &mut r);
        let g = Graph::new();
        let got = warp_right_to_left(g.constant(img.clone()), g.constant(disp.clone())).unwrap();
        let mut expect = vec![0.0; img.len()];
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let xs = x as f64 - disp.data()[index4(disp.shape(), b, 0, y, x)];
                    let x0 = xs.floor();
                    let a = xs - x0;
                    for ch in 0..c {
                        let left = at(&img, b, ch, y as isize, x0 as isize);
                        let right = at(&img, b, ch, y as isize, x0 as isize + 1);
                        expect[index4(img.shape(), b, ch, y, x)] = (1.0 - a) * left + a * right;
                    }
                }
            }
        }
        worst = worst.max(max_diff(got.value().data(), &expect));
    }
    Check::at_most("warp", worst, TOL, format!("{INSTANCES} instances"))
}

pub fn resample_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(106);
    for _ in 0..INSTANCES {
        let f = pick(&mut r, &[1, 2, 4]);
        let (n, c) = (r.gen_range(1..=2), r.gen_range(1..=2));
        let (h, w) = (f * r.gen_range(1..=3), f * r.gen_range(1..=3));
        let scale = r.gen_range(0.25..2.0);
        let x = uniform(&[n, c, h, w], &mut r);
        let g = Graph::new();
        let got = resample(g.constant(x.clone()), f, ResampleMode::DownAverage, scale).unwrap().value();
        let (oh, ow) = (h / f, w / f);
        let oshape = [n, c, oh, ow];
        let mut expect = vec![0.0; n * c * oh * ow];
        for b in 0..n {
            for ch in 0..c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = 0.0;
                        for dy in 0..f {
                            for dx in 0..f {
                                s += x.data()[index4(x.shape(), b, ch, y * f + dy, xx * f + dx)];
                            }
                        }
                        expect[index4(&oshape, b, ch, y, xx)] = s / (f * f) as f64 * scale;
                    }
                }
            }
        }
        worst = worst.max(max_diff(got.data(), &expect));
    }
    Check::at_most("resample (down-average)", worst, TOL, format!("{INSTANCES} instances"))
}

fn naive_smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(107);
    for _ in 0..INSTANCES {
        let x = Tensor::uniform(&[r.gen_range(1..=30)], -3.0, 3.0, &mut r);
        let g = Graph::new();
        let got = smooth_l1(g.constant(x.clone())).value();
        let expect: Vec<f64> = x.data().iter().map(|&v| naive_smooth_l1(v)).collect();
        worst = worst.max(max_diff(got.data(), &expect));
    }
    Check::at_most("smooth_l1", worst, TOL, format!("{INSTANCES} instances"))
}

fn random_mask(shape: &[usize], r: &mut impl Rng) -> Tensor {
    let mut m = Tensor::from_fn(shape, |_| if r.gen_bool(0.7) { 1.0 } else { 0.0 });
    if m.sum() == 0.0 {
        m = m.with_value(0, 1.0);
    }
    m
}

fn naive_scale_loss(gt: &Tensor, pred: &Tensor, mask: &Tensor) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for i in 0..gt.len() {
        if mask.data()[i] != 0.0 {
            s += naive_smooth_l1(gt.data()[i] - pred.data()[i]);
            n += 1.0;
        }
    }
    s / n
}

pub fn scale_loss_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(108);
    for _ in 0..INSTANCES {
        let shape = [r.gen_range(1..=2), 1, r.gen_range(1..=5), r.gen_range(1..=5)];
        let gt = Tensor::uniform(&shape, 0.0, 4.0, &mut r);
        let pred = Tensor::uniform(&shape, 0.0, 4.0, &mut r);
        let mask = random_mask(&shape, &mut r);
        let g = Graph::new();
        let got = scale_loss(&gt, g.constant(pred.clone()), &mask).unwrap().value().item().unwrap();
        worst = worst.max((got - naive_scale_loss(&gt, &pred, &mask)).abs());
    }
    Check::at_most("scale_loss", worst, TOL_REDUCTION, format!("{INSTANCES} instances"))
}

pub fn total_loss_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(109);
    for _ in 0..INSTANCES {
        let scales = r.gen_range(1..=4);
        let (mut gts, mut preds, mut masks, mut weights) = (vec![], vec![], vec![], vec![]);
        for s in 0..scales {
            let shape = [1, 1, 8 >> s.min(3), 8 >> s.min(3)];
            gts.push(Tensor::uniform(&shape, 0.0, 3.0, &mut r));
            preds.push(Tensor::uniform(&shape, 0.0, 3.0, &mut r));
            masks.push(random_mask(&shape, &mut r));
            weights.push(if r.gen_bool(0.25) { 0.0 } else { r.gen_range(0.0..1.0) });
        }
        let g = Graph::new();
        let vars: Vec<_> = preds.iter().map(|p| g.constant(p.clone())).collect();
        let got = total_loss(&g, &vars, &gts, &masks, &weights).unwrap().value().item().unwrap();
        let expect: f64 = (0..scales)
            .filter(|&s| weights[s] != 0.0)
            .map(|s| weights[s] * naive_scale_loss(&gts[s], &preds[s], &masks[s]))
            .sum();
        worst = worst.max((got - expect).abs());
    }
    Check::at_most("total_loss", worst, TOL_REDUCTION, format!("{INSTANCES} instances"))
}

fn random_maps(r: &mut impl Rng) -> (DisparityMap, DisparityMap) {
    let (w, h) = (r.gen_range(1..=6), r.gen_range(1..=6));
    let n = w * h;
    let gt: Vec<f32> = (0..n).map(|_| r.gen_range(0.0..60.0)).collect();
    let pred: Vec<f32> = gt.iter().map(|&g| g + r.gen_range(-8.0f32..8.0)).collect();
    let mut vg: Vec<bool> = (0..n).map(|_| r.gen_bool(0.8)).collect();
    let vp: Vec<bool> = (0..n).map(|_| r.gen_bool(0.9)).collect();
    vg[0] = true;
    let mut vp = vp;
    vp[0] = true;
    (DisparityMap::new(w, h, pred, vp).unwrap(), DisparityMap::new(w, h, gt, vg).unwrap())
}

fn joint(pred: &DisparityMap, gt: &DisparityMap) -> Vec<(f64, f64)> {
    (0..gt.values.len())
        .filter(|&i| pred.valid[i] && gt.valid[i])
        .map(|i| (f64::from(pred.values[i]), f64::from(gt.values[i])))
        .collect()
}

pub fn epe_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(110);
    for _ in 0..INSTANCES {
        let (pred, gt) = random_maps(&mut r);
        let pairs = joint(&pred, &gt);
        let mut s = 0.0;
        for &(p, g) in &pairs {
            s += (p - g).abs();
        }
        worst = worst.max((epe(&pred, &gt).unwrap() - s / pairs.len() as f64).abs());
    }
    Check::at_most("epe", worst, TOL_REDUCTION, format!("{INSTANCES} instances"))
}

pub fn threshold_metrics_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut r = rng(111);
    let thresholds = [1.0, 2.0, 3.0, 4.0];
    for _ in 0..INSTANCES {
        let (pred, gt) = random_maps(&mut r);
        let pairs = joint(&pred, &gt);
        let n = pairs.len() as f64;
        let m = threshold_metrics(&pred, &gt, &thresholds).unwrap();
        let (mut d1, mut sq, mut abs) = (0.0, 0.0, 0.0);
        let mut bad = [0.0; 4];
        for &(p, g) in &pairs {
            let e = (p - g).abs();
            if e > 3.0 && e > 0.05 * g.abs() {
                d1 += 1.0;
            }
            for (b, &t) in bad.iter_mut().zip(&thresholds) {
                if e > t {
                    *b += 1.0;
                }
            }
            sq += e * e;
            abs += e;
        }
        let mut errs = vec![(m.d1_all - d1 / n).abs(), (m.rms - (sq / n).sqrt()).abs(), (m.avg_error - abs / n).abs()];
        errs.extend(m.bad.iter().zip(bad).map(|(&(_, f), b)| (f - b / n).abs()));
        worst = errs.into_iter().fold(worst, f64::max);
    }
    Check::at_most("threshold_metrics", worst, TOL_REDUCTION, format!("{INSTANCES} instances"))
}

/// Every oracle comparison, in a fixed order.
pub fn all() -> Vec<Check> {
    vec![
        conv2d_check(),
        transposed_conv2d_check(),
        correlation_patch_check(),
        correlation_pointwise_check(),
        warp_check(),
        resample_check(),
        smooth_l1_check(),
        scale_loss_check(),
        total_loss_check(),
        epe_check(),
        threshold_metrics_check(),
    ]
}
