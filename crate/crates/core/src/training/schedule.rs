//! Round-based multi-scale loss weighting.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    /// One weight per scale, finest first.
    pub weights: Vec<f64>,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSchedule {
    pub rounds: Vec<Round>,
}

impl Default for LossSchedule {
    /// Four coarse-to-fine rounds of 20, 20, 20 and 30 epochs.
    fn default() -> Self {
        let round = |weights: [f64; 7], epochs| Round { weights: weights.to_vec(), epochs };
        Self {
            rounds: vec![
                round([0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005], 20),
                round([0.6, 0.32, 0.08, 0.04, 0.02, 0.01, 0.005], 20),
                round([0.8, 0.16, 0.04, 0.02, 0.01, 0.005, 0.0025], 20),
                round([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 30),
            ],
        }
    }
}

impl LossSchedule {
    /// Same weights with different per-round epoch counts.
    pub fn with_epochs(&self, epochs: &[usize]) -> Result<Self> {
        if epochs.len() != self.rounds.len() {
            return Err(Error::Config(format!(
                "{} epoch counts for {} rounds",
                epochs.len(),
                self.rounds.len()
            )));
        }
        let rounds = self
            .rounds
            .iter()
            .zip(epochs)
            .map(|(r, &epochs)| Round { epochs, ..r.clone() })
            .collect();
        Ok(Self { rounds })
    }

    pub fn total_epochs(&self) -> usize {
        self.rounds.iter().map(|r| r.epochs).sum()
    }

    /// Cumulative epoch count at the end of each round.
    pub fn boundaries(&self) -> Vec<usize> {
        self.rounds
            .iter()
            .scan(0, |acc, r| {
                *acc += r.epochs;
                Some(*acc)
            })
            .collect()
    }

    /// Zero-based round index for a one-based epoch number.
    pub fn round_of_epoch(&self, epoch: usize) -> Option<usize> {
        self.boundaries().iter().position(|&end| epoch <= end).filter(|_| epoch >= 1)
    }

    pub fn validate(&self, scales: usize) -> Result<()> {
        if self.rounds.is_empty() {
            return Err(Error::Config("schedule has no rounds".into()));
        }
        for (i, r) in self.rounds.iter().enumerate() {
            if r.weights.len() != scales {
                return Err(Error::Config(format!(
                    "round {} has {} weights for {scales} scales",
                    i + 1,
                    r.weights.len()
                )));
            }
            if r.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Config(format!("round {} has a negative or non-finite weight", i + 1)));
            }
        }
        Ok(())
    }
}
