//! Power-of-two spatial resampling with a value rescale.
//!
//! Disparities are measured in pixels of their own resolution, so moving a
//! disparity map between scales multiplies its values as well as its extents.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    /// Mean over non-overlapping `factor x factor` blocks.
    DownAverage,
    /// Bilinear interpolation at half-pixel-aligned centres, edges clamped.
    UpBilinear,
}

/// Interpolation taps `(i0, i1, w0, w1)` of every output coordinate along one axis.
fn up_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            let a = src - i0 as f64;
            (i0, i1, 1.0 - a, a)
        })
        .collect()
}

pub fn resample<'g>(
    input: Var<'g>,
    factor: usize,
    mode: ResampleMode,
    value_scale: f64,
) -> Result<Var<'g>> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::Config(format!("resample factor {factor} is not a power of two")));
    }
    let x = input.value();
    let (b, c, h, w) = x.dims4()?;
    let planes = b * c;
    match mode {
        ResampleMode::DownAverage => {
            if h % factor != 0 || w % factor != 0 {
                return Err(Error::shape(format!(
                    "extent {h}x{w} not divisible by downsampling factor {factor}"
                )));
            }
            let (oh, ow) = (h / factor, w / factor);
            let norm = value_scale / (factor * factor) as f64;
            let mut out = vec![0.0; planes * oh * ow];
            for p in 0..planes {
                let src = &x.data()[p * h * w..(p + 1) * h * w];
                let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
                for y in 0..h {
                    for xx in 0..w {
                        dst[(y / factor) * ow + xx / factor] += src[y * w + xx];
                    }
                }
                dst.iter_mut().for_each(|v| *v *= norm);
            }
            Ok(input.graph().record(
                "resample_down",
                &[input],
                Tensor::from_parts(vec![b, c, oh, ow], out),
                Box::new(move |g, _, _| {
                    let mut gi = vec![0.0; planes * h * w];
                    for p in 0..planes {
                        for y in 0..h {
                            for xx in 0..w {
                                gi[p * h * w + y * w + xx] =
                                    g[p * oh * ow + (y / factor) * ow + xx / factor] * norm;
                            }
                        }
                    }
                    vec![Some(gi)]
                }),
            ))
        }
        ResampleMode::UpBilinear => {
            let (oh, ow) = (h * factor, w * factor);
            let ty = up_taps(h, factor);
            let tx = up_taps(w, factor);
            let mut out = vec![0.0; planes * oh * ow];
            for p in 0..planes {
                let src = &x.data()[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let v = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                            + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
                        out[p * oh * ow + oy * ow + ox] = v * value_scale;
                    }
                }
            }
            Ok(input.graph().record(
                "resample_up",
                &[input],
                Tensor::from_parts(vec![b, c, oh, ow], out),
                Box::new(move |g, _, _| {
                    let mut gi = vec![0.0; planes * h * w];
                    for p in 0..planes {
                        let dst = &mut gi[p * h * w..(p + 1) * h * w];
                        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                                let gv = g[p * oh * ow + oy * ow + ox] * value_scale;
                                dst[y0 * w + x0] += gv * wy0 * wx0;
                                dst[y0 * w + x1] += gv * wy0 * wx1;
                                dst[y1 * w + x0] += gv * wy1 * wx0;
                                dst[y1 * w + x1] += gv * wy1 * wx1;
                            }
                        }
                    }
                    vec![Some(gi)]
                }),
            ))
        }
    }
}
