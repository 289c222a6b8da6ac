use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tabular softmax student: one logit vector per input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentParams {
    pub logits: Vec<Vec<f64>>,
    /// Ridge strength applied to all logits.
    pub ridge: f64,
}

impl StudentParams {
    pub fn zeros(n_inputs: usize, vocab: usize, ridge: f64) -> Self {
        Self { logits: vec![vec![0.0; vocab]; n_inputs], ridge }
    }

    /// Student whose distribution for every input equals the given one.
    pub fn from_distributions(dists: &[Vec<f64>], ridge: f64) -> Self {
        let logits = dists
            .iter()
            .map(|p| {
                let logs: Vec<f64> = p.iter().map(|v| v.ln()).collect();
                let mean = logs.iter().sum::<f64>() / logs.len() as f64;
                logs.into_iter().map(|l| l - mean).collect()
            })
            .collect();
        Self { logits, ridge }
    }

    pub fn check_shape(&self, n_inputs: usize, vocab: usize) -> Result<()> {
        if self.logits.len() < n_inputs {
            return Err(Error::MissingLogits(self.logits.len()));
        }
        for (x, row) in self.logits.iter().enumerate().take(n_inputs) {
            if row.len() != vocab {
                return Err(Error::DimensionMismatch { expected: vocab, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: x });
            }
        }
        Ok(())
    }

    pub fn distribution(&self, input: usize) -> Vec<f64> {
        softmax(&self.logits[input])
    }

    pub fn squared_norm(&self) -> f64 {
        self.logits.iter().flatten().map(|v| v * v).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }

    pub fn distance(&self, other: &StudentParams) -> f64 {
        self.logits
            .iter()
            .flatten()
            .zip(other.logits.iter().flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let z = [1.0, -2.0, 0.5, 700.0];
        let p = softmax(&z);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let shifted: Vec<f64> = z.iter().map(|v| v - 3.0).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn from_distributions_round_trips() {
        let target = vec![vec![0.6, 0.25, 0.15]];
        let s = StudentParams::from_distributions(&target, 0.0);
        for (a, b) in s.distribution(0).iter().zip(&target[0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
