//! Disparity-driven horizontal warping of the right view onto the left view.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear interpolation taps along a row: `(x0, weight0, weight1)` for the
/// sample position `xs`, where `x0 = floor(xs)` and `x0 + 1` is the second tap.
fn taps(xs: f64) -> (isize, f64, f64) {
    let x0 = xs.floor();
    let a = xs - x0;
    (x0 as isize, 1.0 - a, a)
}

fn fetch(row: &[f64], x: isize) -> f64 {
    if x >= 0 && (x as usize) < row.len() {
        row[x as usize]
    } else {
        0.0
    }
}

/// `out(x, y) = right(x - d(x, y), y)`, linearly interpolated, zero outside the image.
///
/// Differentiable with respect to both the image and the disparity; the
/// disparity gradient is the slope of the interpolant `right(x0+1) - right(x0)`
/// (taken from the right at exact integer sample positions).
pub fn warp_right_to_left<'g>(right: Var<'g>, disparity: Var<'g>) -> Result<Var<'g>> {
    let (img, disp) = (right.value(), disparity.value());
    let (b, c, h, w) = img.dims4()?;
    if disp.shape() != [b, 1, h, w] {
        return Err(Error::shape(format!(
            "disparity {:?} does not match image {:?}",
            disp.shape(),
            img.shape()
        )));
    }
    let hw = h * w;
    let mut out = vec![0.0; img.len()];
    for n in 0..b {
        let d = &disp.data()[n * hw..(n + 1) * hw];
        for ch in 0..c {
            let base = (n * c + ch) * hw;
            for y in 0..h {
                let row = &img.data()[base + y * w..base + (y + 1) * w];
                for x in 0..w {
                    let (x0, w0, w1) = taps(x as f64 - d[y * w + x]);
                    out[base + y * w + x] = w0 * fetch(row, x0) + w1 * fetch(row, x0 + 1);
                }
            }
        }
    }
    Ok(right.graph().record(
        "warp",
        &[right, disparity],
        Tensor::from_parts(img.shape().to_vec(), out),
        Box::new(move |g, ins, _| {
            let (img, disp) = (ins[0].data(), ins[1].data());
            let mut gimg = vec![0.0; img.len()];
            let mut gdisp = vec![0.0; disp.len()];
            for n in 0..b {
                for ch in 0..c {
                    let base = (n * c + ch) * hw;
                    for y in 0..h {
                        let row = &img[base + y * w..base + (y + 1) * w];
                        for x in 0..w {
                            let di = n * hw + y * w + x;
                            let (x0, w0, w1) = taps(x as f64 - disp[di]);
                            let gv = g[base + y * w + x];
                            for (xi, wt) in [(x0, w0), (x0 + 1, w1)] {
                                if xi >= 0 && (xi as usize) < w {
                                    gimg[base + y * w + xi as usize] += gv * wt;
                                }
                            }
                            // d out / d xs = right(x0+1) - right(x0); d xs / d d = -1
                            gdisp[di] -= gv * (fetch(row, x0 + 1) - fetch(row, x0));
                        }
                    }
                }
            }
            vec![Some(gimg), Some(gdisp)]
        }),
    ))
}
