#![allow(dead_code)]

pub mod grads;
pub mod oracles;

use fadnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Outcome of one criterion-style check.
pub struct Check {
    pub name: &'static str,
    /// Worst observed error (or other figure of merit).
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: &'static str, value: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self { name, value, bound, passed: value <= bound && value.is_finite(), detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!(
            "{:<28} {} worst {:.3e} (bound {:.0e}) {}",
            self.name,
            if self.passed { "ok  " } else { "FAIL" },
            self.value,
            self.bound,
            self.detail
        )
    }
}

pub fn index4(shape: &[usize], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * shape[1] + c) * shape[2] + y) * shape[3] + x
}

pub fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.gen_range(0..items.len())]
}
