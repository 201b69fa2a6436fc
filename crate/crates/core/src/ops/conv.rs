//! Direct 2-D convolution and transposed convolution.
//!
//! Both share three kernels: the forward correlation, its input adjoint (a
//! scatter) and the weight gradient. A transposed convolution is the input
//! adjoint of the convolution with the same weight tensor, so its forward and
//! backward passes simply swap those kernels.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvSpec {
    /// Stride-1 convolution preserving spatial extent (odd `kernel`).
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        debug_assert!(kernel % 2 == 1, "same-size convolution needs an odd kernel");
        Self { in_channels, out_channels, kernel, stride: 1, padding: (kernel - 1) / 2, transposed: false }
    }

    pub fn strided(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self { stride, ..Self::same(in_channels, out_channels, kernel) }
    }

    /// 4x4 stride-2 transposed convolution doubling each spatial extent.
    pub fn upsample(in_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, out_channels, kernel: 4, stride: 2, padding: 1, transposed: true }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel;
        if self.transposed {
            [self.in_channels, self.out_channels, k, k]
        } else {
            [self.out_channels, self.in_channels, k, k]
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel + self.out_channels
    }

    /// Output spatial extent for an input extent.
    pub fn output_extent(&self, len: usize) -> Result<usize> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if self.transposed {
            let grown = (len.max(1) - 1) * s + k;
            grown
                .checked_sub(2 * p)
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::shape(format!("transposed conv collapses extent {len}")))
        } else {
            (len + 2 * p)
                .checked_sub(k)
                .map(|n| n / s + 1)
                .ok_or_else(|| Error::shape(format!("kernel {k} larger than padded extent {len}")))
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("degenerate convolution {self:?}")));
        }
        Ok(())
    }
}

/// Geometry of a forward convolution: `input (b, ci, h, w)` to `output (b, co, oh, ow)`.
#[derive(Clone, Copy)]
struct Geometry {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    /// Output positions `o` with `0 <= o*stride + offset < len`, clipped to `out_len`.
    fn valid(&self, offset: isize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
        let hi = if (len as isize) <= offset { 0 } else { (len as isize - 1 - offset) / s + 1 };
        let hi = hi.min(out_len as isize).max(0) as usize;
        (lo as usize, hi.max(lo as usize))
    }
}

fn forward_kernel(x: &[f64], wt: &[f64], g: Geometry) -> Vec<f64> {
    let Geometry { b, ci, h, w, co, oh, ow, k, stride, pad } = g;
    let mut out = vec![0.0; b * co * oh * ow];
    for n in 0..b {
        for o in 0..co {
            let plane = &mut out[(n * co + o) * oh * ow..(n * co + o + 1) * oh * ow];
            for i in 0..ci {
                let src = &x[(n * ci + i) * h * w..(n * ci + i + 1) * h * w];
                for ky in 0..k {
                    let oy_off = ky as isize - pad as isize;
                    let (y0, y1) = g.valid(oy_off, h, oh);
                    for kx in 0..k {
                        let wv = wt[((o * ci + i) * k + ky) * k + kx];
                        let ox_off = kx as isize - pad as isize;
                        let (x0, x1) = g.valid(ox_off, w, ow);
                        for oy in y0..y1 {
                            let iy = (oy * stride) as isize + oy_off;
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let start = (x0 as isize + ox_off) as usize;
                                let seg = &row[start..start + (x1 - x0)];
                                for (d, s) in dst[x0..x1].iter_mut().zip(seg) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in x0..x1 {
                                    let ix = ((ox * stride) as isize + ox_off) as usize;
                                    dst[ox] += wv * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`forward_kernel`] with respect to its input.
fn input_adjoint_kernel(gout: &[f64], wt: &[f64], g: Geometry) -> Vec<f64> {
    let Geometry { b, ci, h, w, co, oh, ow, k, stride, pad } = g;
    let mut gin = vec![0.0; b * ci * h * w];
    for n in 0..b {
        for i in 0..ci {
            let dst = &mut gin[(n * ci + i) * h * w..(n * ci + i + 1) * h * w];
            for o in 0..co {
                let plane = &gout[(n * co + o) * oh * ow..(n * co + o + 1) * oh * ow];
                for ky in 0..k {
                    let oy_off = ky as isize - pad as isize;
                    let (y0, y1) = g.valid(oy_off, h, oh);
                    for kx in 0..k {
                        let wv = wt[((o * ci + i) * k + ky) * k + kx];
                        let ox_off = kx as isize - pad as isize;
                        let (x0, x1) = g.valid(ox_off, w, ow);
                        for oy in y0..y1 {
                            let iy = ((oy * stride) as isize + oy_off) as usize;
                            let grow = &plane[oy * ow..(oy + 1) * ow];
                            let row = &mut dst[iy * w..(iy + 1) * w];
                            if stride == 1 {
                                let start = (x0 as isize + ox_off) as usize;
                                let seg = &mut row[start..start + (x1 - x0)];
                                for (d, s) in seg.iter_mut().zip(&grow[x0..x1]) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in x0..x1 {
                                    let ix = ((ox * stride) as isize + ox_off) as usize;
                                    row[ix] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Gradient of [`forward_kernel`] with respect to its weight.
fn weight_grad_kernel(gout: &[f64], x: &[f64], g: Geometry) -> Vec<f64> {
    let Geometry { b, ci, h, w, co, oh, ow, k, stride, pad } = g;
    let mut gw = vec![0.0; co * ci * k * k];
    for n in 0..b {
        for o in 0..co {
            let plane = &gout[(n * co + o) * oh * ow..(n * co + o + 1) * oh * ow];
            for i in 0..ci {
                let src = &x[(n * ci + i) * h * w..(n * ci + i + 1) * h * w];
                for ky in 0..k {
                    let oy_off = ky as isize - pad as isize;
                    let (y0, y1) = g.valid(oy_off, h, oh);
                    for kx in 0..k {
                        let ox_off = kx as isize - pad as isize;
                        let (x0, x1) = g.valid(ox_off, w, ow);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = ((oy * stride) as isize + oy_off) as usize;
                            let row = &src[iy * w..(iy + 1) * w];
                            let grow = &plane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let start = (x0 as isize + ox_off) as usize;
                                acc += grow[x0..x1]
                                    .iter()
                                    .zip(&row[start..start + (x1 - x0)])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            } else {
                                for ox in x0..x1 {
                                    let ix = ((ox * stride) as isize + ox_off) as usize;
                                    acc += grow[ox] * row[ix];
                                }
                            }
                        }
                        gw[((o * ci + i) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
    gw
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, idx) in out.chunks_exact_mut(plane).zip((0..bias.len()).cycle()) {
        let bv = bias[idx];
        chunk.iter_mut().for_each(|v| *v += bv);
    }
}

fn bias_grad(g: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; channels];
    for (chunk, idx) in g.chunks_exact(plane).zip((0..channels).cycle()) {
        gb[idx] += chunk.iter().sum::<f64>();
    }
    gb
}

fn check_params(spec: &ConvSpec, input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<()> {
    spec.validate()?;
    let (_, c, _, _) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "convolution expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(format!(
            "weight shape {:?} does not match {:?}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::shape(format!("bias shape {:?}", b.shape())));
        }
    }
    Ok(())
}

/// Cross-correlation-style convolution plus optional per-channel bias.
pub fn conv2d<'g>(
    input: Var<'g>,
    weight: Var<'g>,
    bias: Option<Var<'g>>,
    spec: &ConvSpec,
) -> Result<Var<'g>> {
    if spec.transposed {
        return Err(Error::Config("conv2d given a transposed spec".into()));
    }
    let (x, wt) = (input.value(), weight.value());
    let bv = bias.map(|b| b.value());
    check_params(spec, &x, &wt, bv.as_ref())?;
    let (b, ci, h, w) = x.dims4()?;
    let geo = Geometry {
        b,
        ci,
        h,
        w,
        co: spec.out_channels,
        oh: spec.output_extent(h)?,
        ow: spec.output_extent(w)?,
        k: spec.kernel,
        stride: spec.stride,
        pad: spec.padding,
    };
    let mut out = forward_kernel(x.data(), wt.data(), geo);
    if let Some(bv) = &bv {
        add_bias(&mut out, bv.data(), geo.oh * geo.ow);
    }
    let value = Tensor::from_parts(vec![b, geo.co, geo.oh, geo.ow], out);
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(input.graph().record(
        "conv2d",
        &inputs,
        value,
        Box::new(move |g, ins, _| {
            let mut grads = vec![
                Some(input_adjoint_kernel(g, ins[1].data(), geo)),
                Some(weight_grad_kernel(g, ins[0].data(), geo)),
            ];
            if ins.len() == 3 {
                grads.push(Some(bias_grad(g, geo.co, geo.oh * geo.ow)));
            }
            grads
        }),
    ))
}

/// Transposed convolution: the input adjoint of [`conv2d`] with the same weight.
pub fn transposed_conv2d<'g>(
    input: Var<'g>,
    weight: Var<'g>,
    bias: Option<Var<'g>>,
    spec: &ConvSpec,
) -> Result<Var<'g>> {
    if !spec.transposed {
        return Err(Error::Config("transposed_conv2d given a forward spec".into()));
    }
    let (x, wt) = (input.value(), weight.value());
    let bv = bias.map(|b| b.value());
    check_params(spec, &x, &wt, bv.as_ref())?;
    let (b, ci, h, w) = x.dims4()?;
    let (oh, ow) = (spec.output_extent(h)?, spec.output_extent(w)?);
    // The matching forward convolution maps (co, oh, ow) back onto (ci, h, w).
    let geo = Geometry {
        b,
        ci: spec.out_channels,
        h: oh,
        w: ow,
        co: ci,
        oh: h,
        ow: w,
        k: spec.kernel,
        stride: spec.stride,
        pad: spec.padding,
    };
    let mut out = input_adjoint_kernel(x.data(), wt.data(), geo);
    if let Some(bv) = &bv {
        add_bias(&mut out, bv.data(), oh * ow);
    }
    let value = Tensor::from_parts(vec![b, spec.out_channels, oh, ow], out);
    let co = spec.out_channels;
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(input.graph().record(
        "transposed_conv2d",
        &inputs,
        value,
        Box::new(move |g, ins, _| {
            let mut grads = vec![
                Some(forward_kernel(g, ins[1].data(), geo)),
                Some(weight_grad_kernel(ins[0].data(), g, geo)),
            ];
            if ins.len() == 3 {
                grads.push(Some(bias_grad(g, co, oh * ow)));
            }
            grads
        }),
    ))
}
