//! Probability vectors over a finite vocabulary and the information
//! quantities the weighting rules are built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries below this are treated as rounding noise rather than negative mass.
pub const NEGATIVE_TOL: f64 = 1e-12;
/// Allowed deviation of the total mass from one.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A validated probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenDistribution(Vec<f64>);

impl TokenDistribution {
    /// Validates a raw vector. Entries in `[-1e-12, 0)` are snapped to zero.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_distribution(&probs).map(|_| ())?;
        Ok(Self(probs.into_iter().map(|p| p.max(0.0)).collect()))
    }

    /// Builds a distribution without checks. The caller guarantees validity.
    pub(crate) fn from_raw_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn uniform(size: usize) -> Self {
        Self(vec![1.0 / size as f64; size])
    }

    pub fn point_mass(size: usize, index: usize) -> Self {
        let mut probs = vec![0.0; size];
        probs[index] = 1.0;
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    /// Population variance of the entries (not of a random variable drawn from `self`).
    pub fn entry_variance(&self) -> f64 {
        let n = self.0.len() as f64;
        let mean = self.0.iter().sum::<f64>() / n;
        self.0.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n
    }
}

impl TryFrom<Vec<f64>> for TokenDistribution {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<TokenDistribution> for Vec<f64> {
    fn from(value: TokenDistribution) -> Self {
        value.0
    }
}

impl AsRef<[f64]> for TokenDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Checks nonnegativity (down to `-1e-12`) and unit mass (within `1e-9`).
pub fn validate_distribution(probs: &[f64]) -> Result<()> {
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if value < -NEGATIVE_TOL {
            return Err(Error::NegativeMass { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &TokenDistribution) -> f64 {
    -p.0.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Cross-entropy `-sum_i q_i ln p_i`. Infinite when `p` misses support of `q`.
pub fn cross_entropy(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).filter(|(&qi, _)| qi > 0.0).map(|(&qi, &pi)| -qi * pi.ln()).sum()
}

/// `KL(q || p)` in nats.
pub fn kl_divergence(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).filter(|(&qi, _)| qi > 0.0).map(|(&qi, &pi)| qi * (qi / pi).ln()).sum()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
