//! Least-squares fits used by the convergence and perturbation diagnostics.

use serde::Serialize;

use super::train::TrainTrace;
use crate::error::{Error, Result};

/// Minimum number of usable trace points for a rate fit.
pub const MIN_RATE_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit `y = slope * x` with the uncentered coefficient of determination
/// `1 - SS_res / sum y^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OriginFit {
    pub slope: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// Exponent of `L_t - L* ~ C t^slope`.
    pub slope: f64,
    pub constant: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InsufficientTrace { points: n.min(ys.len()), needed: 2 });
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("regressor has no spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LinearFit { slope, intercept, r_squared })
}

pub fn origin_fit(xs: &[f64], ys: &[f64]) -> Result<OriginFit> {
    if xs.is_empty() || ys.len() != xs.len() {
        return Err(Error::InsufficientTrace { points: xs.len().min(ys.len()), needed: 1 });
    }
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("regressor is identically zero".into()));
    }
    let slope = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / sxx;
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(OriginFit { slope, r_squared })
}

/// Fits `ln(L_t - L*)` against `ln t` over the tail half of the points with
/// `t >= 1` and `L_t > L*`.
pub fn fit_convergence_rate(trace: &TrainTrace, l_star: f64) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = trace
        .records
        .iter()
        .filter(|r| r.step >= 1 && r.loss > l_star)
        .map(|r| ((r.step as f64).ln(), (r.loss - l_star).ln()))
        .collect();
    if usable.len() < MIN_RATE_POINTS {
        return Err(Error::InsufficientTrace { points: usable.len(), needed: MIN_RATE_POINTS });
    }
    let tail = &usable[usable.len() / 2..];
    let (xs, ys): (Vec<f64>, Vec<f64>) = tail.iter().copied().unzip();
    let fit = linear_fit(&xs, &ys)?;
    Ok(RateFit { slope: fit.slope, constant: fit.intercept.exp(), r_squared: fit.r_squared, points: tail.len() })
}
