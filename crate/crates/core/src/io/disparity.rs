use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel disparity image with per-pixel validity.
///
/// Values are stored as `f32`, the precision of both on-disk formats, so a
/// map written and read back compares equal bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} map with {} values and {} validity flags",
                values.len(),
                valid.len()
            )));
        }
        Ok(Self { width, height, values, valid })
    }

    /// Fully valid map; non-finite values are marked invalid.
    pub fn dense(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite()).collect();
        Self::new(width, height, values, valid)
    }

    /// From a `(1, H, W)` or `(1, 1, H, W)` tensor; `mask` marks valid pixels with non-zero.
    pub fn from_tensor(t: &Tensor, mask: Option<&Tensor>) -> Result<Self> {
        let (h, w) = match t.shape() {
            [1, h, w] | [1, 1, h, w] => (*h, *w),
            other => return Err(Error::shape(format!("expected a single disparity plane, got {other:?}"))),
        };
        let values: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
        let valid = match mask {
            Some(m) if m.len() == values.len() => {
                m.data().iter().zip(&values).map(|(&m, v)| m != 0.0 && v.is_finite()).collect()
            }
            Some(m) => return Err(Error::shape(format!("mask {:?} for {h}x{w} map", m.shape()))),
            None => values.iter().map(|v| v.is_finite()).collect(),
        };
        Self::new(w, h, values, valid)
    }

    /// Values as a `(1, H, W)` tensor and validity as a 0/1 tensor.
    pub fn to_tensors(&self) -> (Tensor, Tensor) {
        let shape = [1, self.height, self.width];
        let values = Tensor::from_fn(&shape, |i| if self.valid[i] { f64::from(self.values[i]) } else { 0.0 });
        let mask = Tensor::from_fn(&shape, |i| if self.valid[i] { 1.0 } else { 0.0 });
        (values, mask)
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}
