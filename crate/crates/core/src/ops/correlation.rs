//! Horizontal cost volumes between left and right feature maps.
//!
//! Channel `j` of the output scores the match between a left pixel `x` and
//! the right pixel `x - j` on the same row, for shifts `j = 0..D`.

use super::conv::{conv2d, ConvSpec};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelationSpec {
    /// Number of candidate shifts `D`; also the output channel count.
    pub max_displacement: usize,
    /// Patch half-width `k`; 0 compares single pixels.
    pub kernel: usize,
}

impl CorrelationSpec {
    pub fn pointwise(max_displacement: usize) -> Self {
        Self { max_displacement, kernel: 0 }
    }

    pub fn displacements(&self) -> impl Iterator<Item = usize> {
        0..self.max_displacement
    }
}

/// Per-pixel channel products `P[j][y][x] = sum_c f1[c,y,x] * f2[c,y,x-j]`, zero where `x < j`.
fn pixel_products(f1: &[f64], f2: &[f64], dims: (usize, usize, usize, usize), d: usize) -> Vec<f64> {
    let (b, c, h, w) = dims;
    let hw = h * w;
    let mut out = vec![0.0; b * d * hw];
    for n in 0..b {
        for j in 0..d.min(w) {
            let dst = &mut out[(n * d + j) * hw..(n * d + j + 1) * hw];
            for ch in 0..c {
                let a = &f1[(n * c + ch) * hw..(n * c + ch + 1) * hw];
                let bb = &f2[(n * c + ch) * hw..(n * c + ch + 1) * hw];
                for y in 0..h {
                    let row = y * w;
                    for x in j..w {
                        dst[row + x] += a[row + x] * bb[row + x - j];
                    }
                }
            }
        }
    }
    out
}

/// Zero-padded `(2k+1)^2` box sum over each plane; self-adjoint.
fn box_sum(planes: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    if k == 0 {
        return planes.to_vec();
    }
    let hw = h * w;
    let mut rows = vec![0.0; planes.len()];
    let mut out = vec![0.0; planes.len()];
    for (src, dst) in planes.chunks_exact(hw).zip(rows.chunks_exact_mut(hw)) {
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(k);
                let hi = (x + k + 1).min(w);
                dst[y * w + x] = src[y * w + lo..y * w + hi].iter().sum();
            }
        }
    }
    for (src, dst) in rows.chunks_exact(hw).zip(out.chunks_exact_mut(hw)) {
        for y in 0..h {
            let lo = y.saturating_sub(k);
            let hi = (y + k + 1).min(h);
            for yy in lo..hi {
                for x in 0..w {
                    dst[y * w + x] += src[yy * w + x];
                }
            }
        }
    }
    out
}

/// Patch correlation: sum over offsets in `[-k, k]^2` and channels of
/// `f1(x + o) * f2(x - j + o)`, zero-padded at the borders.
pub fn correlation_patch<'g>(f1: Var<'g>, f2: Var<'g>, spec: &CorrelationSpec) -> Result<Var<'g>> {
    let (a, b) = (f1.value(), f2.value());
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "correlation of {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let dims = a.dims4()?;
    let (bsz, c, h, w) = dims;
    let (d, k) = (spec.max_displacement, spec.kernel);
    if d == 0 {
        return Err(Error::Config("correlation needs at least one displacement".into()));
    }
    let products = pixel_products(a.data(), b.data(), dims, d);
    let value = Tensor::from_parts(vec![bsz, d, h, w], box_sum(&products, h, w, k));
    Ok(f1.graph().record(
        "correlation",
        &[f1, f2],
        value,
        Box::new(move |g, ins, _| {
            let gp = box_sum(g, h, w, k);
            let (a, b) = (ins[0].data(), ins[1].data());
            let hw = h * w;
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; b.len()];
            for n in 0..bsz {
                for j in 0..d.min(w) {
                    let gpj = &gp[(n * d + j) * hw..(n * d + j + 1) * hw];
                    for ch in 0..c {
                        let base = (n * c + ch) * hw;
                        for y in 0..h {
                            let row = base + y * w;
                            for x in j..w {
                                let gv = gpj[y * w + x];
                                ga[row + x] += gv * b[row + x - j];
                                gb[row + x - j] += gv * a[row + x];
                            }
                        }
                    }
                }
            }
            vec![Some(ga), Some(gb)]
        }),
    ))
}

/// Point-wise correlation: a shared 3x3 stride-1 convolution applied to both
/// feature maps followed by single-pixel (`k = 0`) correlation.
pub fn correlation_pointwise<'g>(
    f1: Var<'g>,
    f2: Var<'g>,
    spec: &CorrelationSpec,
    pre_conv: &ConvSpec,
    weight: Var<'g>,
    bias: Option<Var<'g>>,
) -> Result<Var<'g>> {
    if pre_conv.kernel != 3
        || pre_conv.stride != 1
        || pre_conv.transposed
        || pre_conv.in_channels != pre_conv.out_channels
    {
        return Err(Error::Config(format!(
            "point-wise correlation needs a channel-preserving 3x3 stride-1 pre-convolution, got {pre_conv:?}"
        )));
    }
    let p1 = conv2d(f1, weight, bias, pre_conv)?;
    let p2 = conv2d(f2, weight, bias, pre_conv)?;
    correlation_patch(p1, p2, &CorrelationSpec { kernel: 0, ..*spec })
}

/// 3x3 weights whose centre tap copies each channel: the identity pre-transform.
pub fn identity_pre_weight(channels: usize) -> Tensor {
    let mut w = vec![0.0; channels * channels * 9];
    for c in 0..channels {
        w[(c * channels + c) * 9 + 4] = 1.0;
    }
    Tensor::from_parts(vec![channels, channels, 3, 3], w)
}
