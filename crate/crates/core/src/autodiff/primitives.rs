//! Elementwise, reduction and layout operations.

use super::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the two operands of a binary op line up.
///
/// Only the leading (batch) axis broadcasts, and only from extent 1.
#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    LeftBatch,
    RightBatch,
}

fn broadcast(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Broadcast)> {
    if a == b {
        return Ok((a.to_vec(), Broadcast::Same));
    }
    if a.len() == b.len() && !a.is_empty() && a[1..] == b[1..] {
        if a[0] == 1 {
            return Ok((b.to_vec(), Broadcast::LeftBatch));
        }
        if b[0] == 1 {
            return Ok((a.to_vec(), Broadcast::RightBatch));
        }
    }
    Err(Error::shape(format!("operand shapes {a:?} and {b:?} do not conform")))
}

/// Fold a full-size gradient back onto a batch-1 operand.
fn reduce_batch(g: &[f64], inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; inner];
    for chunk in g.chunks_exact(inner) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::Axis { axis, rank });
    }
    Ok(())
}

/// Split `shape` around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'g> Var<'g> {
    fn binary(
        self,
        other: Var<'g>,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        // Partial derivatives (d/da, d/db) at (a, b).
        df: fn(f64, f64) -> (f64, f64),
    ) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (shape, mode) = broadcast(a.shape(), b.shape())?;
        let n: usize = shape.iter().product();
        let (la, lb) = (a.len(), b.len());
        let (ad, bd) = (a.data(), b.data());
        let out: Vec<f64> = (0..n).map(|i| f(ad[i % la], bd[i % lb])).collect();
        let value = Tensor::from_parts(shape, out);
        Ok(self.graph.record(
            op,
            &[self, other],
            value,
            Box::new(move |g, inputs, _| {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                let (la, lb) = (a.len(), b.len());
                let mut ga = Vec::with_capacity(g.len());
                let mut gb = Vec::with_capacity(g.len());
                for (i, &gi) in g.iter().enumerate() {
                    let (da, db) = df(a[i % la], b[i % lb]);
                    ga.push(gi * da);
                    gb.push(gi * db);
                }
                match mode {
                    Broadcast::Same => vec![Some(ga), Some(gb)],
                    Broadcast::LeftBatch => vec![Some(reduce_batch(&ga, la)), Some(gb)],
                    Broadcast::RightBatch => vec![Some(ga), Some(reduce_batch(&gb, lb))],
                }
            }),
        ))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn scale(self, factor: f64) -> Var<'g> {
        self.unary("scale", move |v| v * factor, move |_, g| g * factor)
    }

    pub fn abs(self) -> Var<'g> {
        // Subgradient sign(0) = 0.
        self.unary("abs", f64::abs, |x, g| g * sign(x))
    }

    /// Elementwise `max(x, floor)`; ties route the gradient to `x`.
    pub fn max_scalar(self, floor: f64) -> Var<'g> {
        self.unary(
            "max_scalar",
            move |v| v.max(floor),
            move |x, g| if x >= floor { g } else { 0.0 },
        )
    }

    /// Elementwise op whose derivative depends only on the input value.
    pub(crate) fn unary(
        self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'g> {
        let value = self.value().map(f);
        self.graph.record(
            op,
            &[self],
            value,
            Box::new(move |g, inputs, _| {
                let x = inputs[0].data();
                vec![Some(x.iter().zip(g).map(|(&x, &g)| df(x, g)).collect())]
            }),
        )
    }

    /// Sum over `axes`, which are removed from the shape.
    pub fn sum(self, axes: &[usize]) -> Result<Var<'g>> {
        let value = self.value();
        let shape = value.shape().to_vec();
        for &axis in axes {
            check_axis(axis, shape.len())?;
        }
        let keep: Vec<bool> = (0..shape.len()).map(|d| !axes.contains(&d)).collect();
        let out_shape: Vec<usize> =
            shape.iter().zip(&keep).filter(|(_, &k)| k).map(|(&e, _)| e).collect();
        let out_len: usize = out_shape.iter().product();

        // Map every input element to its output slot once; reused by backward.
        let strides = strides_of(&out_shape);
        let mut index = vec![0usize; value.len()];
        let mut coord = vec![0usize; shape.len()];
        for slot in index.iter_mut() {
            let mut o = 0;
            let mut k = 0;
            for d in 0..shape.len() {
                if keep[d] {
                    o += coord[d] * strides[k];
                    k += 1;
                }
            }
            *slot = o;
            increment(&mut coord, &shape);
        }

        let mut out = vec![0.0; out_len];
        for (v, &o) in value.data().iter().zip(&index) {
            out[o] += v;
        }
        Ok(self.graph.record(
            "sum",
            &[self],
            Tensor::from_parts(out_shape, out),
            Box::new(move |g, _, _| vec![Some(index.iter().map(|&o| g[o]).collect())]),
        ))
    }

    pub fn mean(self, axes: &[usize]) -> Result<Var<'g>> {
        let shape = self.shape();
        for &axis in axes {
            check_axis(axis, shape.len())?;
        }
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        Ok(self.sum(axes)?.scale(1.0 / count as f64))
    }

    pub fn sum_all(self) -> Var<'g> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum(&axes).expect("all axes are in range")
    }

    pub fn mean_all(self) -> Var<'g> {
        let n = self.value().len();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let graph = first.graph;
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let rank = values[0].rank();
        check_axis(axis, rank)?;
        for v in &values[1..] {
            let ok = v.rank() == rank
                && (0..rank).all(|d| d == axis || v.shape()[d] == values[0].shape()[d]);
            if !ok {
                return Err(Error::shape(format!(
                    "concat along axis {axis}: {:?} vs {:?}",
                    values[0].shape(),
                    v.shape()
                )));
            }
        }
        let (outer, _, inner) = split_axis(values[0].shape(), axis);
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out_shape = values[0].shape().to_vec();
        out_shape[axis] = total;

        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                out.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        Ok(graph.record(
            "concat",
            parts,
            Tensor::from_parts(out_shape, out),
            Box::new(move |g, _, _| {
                let mut grads: Vec<Vec<f64>> =
                    extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gr, &e) in grads.iter_mut().zip(&extents) {
                        gr.extend_from_slice(&g[pos..pos + e * inner]);
                        pos += e * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    pub fn concat_channels(parts: &[Var<'g>]) -> Result<Var<'g>> {
        Self::concat(parts, 1)
    }

    /// Keep indices `start..end` of `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'g>> {
        let value = self.value();
        check_axis(axis, value.rank())?;
        let (outer, extent, inner) = split_axis(value.shape(), axis);
        if start > end || end > extent {
            return Err(Error::shape(format!(
                "slice {start}..{end} of axis {axis} with extent {extent}"
            )));
        }
        let len = end - start;
        let mut out_shape = value.shape().to_vec();
        out_shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&value.data()[base..base + len * inner]);
        }
        Ok(self.graph.record(
            "slice",
            &[self],
            Tensor::from_parts(out_shape, out),
            Box::new(move |g, _, _| {
                let mut gi = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    gi[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Zero-pad the two trailing (spatial) axes.
    pub fn pad2d(self, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var<'g>> {
        let value = self.value();
        if value.rank() < 2 {
            return Err(Error::shape(format!("pad2d needs rank >= 2, got {:?}", value.shape())));
        }
        let rank = value.rank();
        let (h, w) = (value.shape()[rank - 2], value.shape()[rank - 1]);
        let planes = value.len() / (h * w).max(1);
        let (ph, pw) = (h + top + bottom, w + left + right);
        let mut out_shape = value.shape().to_vec();
        out_shape[rank - 2] = ph;
        out_shape[rank - 1] = pw;
        let mut out = vec![0.0; planes * ph * pw];
        for p in 0..planes {
            for y in 0..h {
                let src = &value.data()[(p * h + y) * w..(p * h + y + 1) * w];
                let dst = (p * ph + y + top) * pw + left;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
        Ok(self.graph.record(
            "pad2d",
            &[self],
            Tensor::from_parts(out_shape, out),
            Box::new(move |g, _, _| {
                let mut gi = Vec::with_capacity(planes * h * w);
                for p in 0..planes {
                    for y in 0..h {
                        let src = (p * ph + y + top) * pw + left;
                        gi.extend_from_slice(&g[src..src + w]);
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = self.value().reshape(shape)?;
        Ok(self.graph.record(
            "reshape",
            &[self],
            value,
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn increment(coord: &mut [usize], shape: &[usize]) {
    for d in (0..shape.len()).rev() {
        coord[d] += 1;
        if coord[d] < shape[d] {
            return;
        }
        coord[d] = 0;
    }
}
