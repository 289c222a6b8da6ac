use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-teacher weight limits plus the declared Lipschitz bound used by the
/// regularity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds {
    pub w_min: f64,
    pub w_max: f64,
    pub lipschitz: f64,
}

impl WeightBounds {
    pub fn new(w_min: f64, w_max: f64, lipschitz: f64) -> Result<Self> {
        let bounds = Self { w_min, w_max, lipschitz };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_min > 0.0 && self.w_min <= self.w_max && self.w_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "weight bounds need 0 < w_min <= w_max < inf, got [{}, {}]",
                self.w_min, self.w_max
            )));
        }
        if !(self.lipschitz > 0.0) {
            return Err(Error::InvalidParameter(format!("Lipschitz bound must be positive, got {}", self.lipschitz)));
        }
        Ok(())
    }

    /// A normalized vector of length `k` can respect these bounds.
    pub fn check_feasible(&self, k: usize) -> Result<()> {
        let kf = k as f64;
        if k == 0 || kf * self.w_min > 1.0 || kf * self.w_max < 1.0 {
            return Err(Error::InfeasibleBounds { k, w_min: self.w_min, w_max: self.w_max });
        }
        Ok(())
    }

    /// Range guaranteed for a normalized product of `factors` components that
    /// each lie in `[w_min, w_max]`.
    pub fn composed(&self, k: usize, factors: i32) -> (f64, f64) {
        let lo = self.w_min.powi(factors);
        let hi = self.w_max.powi(factors);
        let rest = (k as f64) - 1.0;
        (lo / (lo + rest * hi), hi / (hi + rest * lo))
    }
}

/// Teacher weights. Operators are expected to return normalized vectors, but
/// the type does not enforce it so that non-conforming operators can be
/// represented and reported by the conformance checker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.sum() - 1.0).abs() <= tol
    }

    pub fn within(&self, lo: f64, hi: f64, tol: f64) -> bool {
        self.0.iter().all(|&w| w >= lo - tol && w <= hi + tol)
    }

    pub fn max_abs_diff(&self, other: &WeightVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasibility() {
        let b = WeightBounds::new(0.2, 0.8, 1.0).unwrap();
        assert!(b.check_feasible(2).is_ok());
        assert!(b.check_feasible(5).is_ok());
        assert!(matches!(b.check_feasible(6), Err(Error::InfeasibleBounds { k: 6, .. })));
        let tight = WeightBounds::new(0.05, 0.3, 1.0).unwrap();
        assert!(tight.check_feasible(3).is_err());
        assert!(tight.check_feasible(4).is_ok());
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(WeightBounds::new(0.0, 0.5, 1.0).is_err());
        assert!(WeightBounds::new(0.6, 0.5, 1.0).is_err());
        assert!(WeightBounds::new(0.1, f64::INFINITY, 1.0).is_err());
        assert!(WeightBounds::new(0.1, 0.5, 0.0).is_err());
    }

    #[test]
    fn composed_bounds_uniform_limit() {
        let b = WeightBounds::new(0.25, 0.25, 1.0).unwrap();
        let (lo, hi) = b.composed(4, 3);
        assert!((lo - 0.25).abs() < 1e-15 && (hi - 0.25).abs() < 1e-15);
    }
}
