//! Projection of raw positive scores onto the capped simplex
//! `{w : sum w = 1, w_min <= w_k <= w_max}`.

use crate::domain::{WeightBounds, WeightVector};
use crate::error::{Error, Result};

/// Normalizes `raw` and, if any entry leaves `[w_min, w_max]`, clamps it and
/// lets the unclamped entries absorb the residual mass proportionally.
///
/// The fixed point of clamp-and-redistribute has the closed form
/// `w_k = clamp(s * raw_k, w_min, w_max)` for the unique scale `s` at which
/// the entries sum to one; `s` is found exactly by scanning the breakpoints
/// of that piecewise-linear sum. The result is order-preserving in `raw`,
/// invariant to rescaling `raw`, and idempotent.
pub fn clip_normalize(raw: &[f64], bounds: &WeightBounds) -> Result<WeightVector> {
    let k = raw.len();
    bounds.check_feasible(k)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("raw weights must be finite".into()));
    }
    let r: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = r.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let normalized: Vec<f64> = r.iter().map(|v| v / total).collect();
    let (lo, hi) = (bounds.w_min, bounds.w_max);
    if normalized.iter().all(|&w| w >= lo && w <= hi) {
        return Ok(WeightVector(normalized));
    }

    let mass = |s: f64| -> f64 { normalized.iter().map(|&v| (s * v).clamp(lo, hi)).sum() };

    // Breakpoints where an entry enters or leaves a bound. Zero entries sit at
    // w_min for every finite scale.
    let mut breaks: Vec<f64> = normalized.iter().filter(|&&v| v > 0.0).flat_map(|&v| [lo / v, hi / v]).collect();
    breaks.sort_by(|a, b| a.total_cmp(b));

    let mut left = 0.0;
    let mut scale = None;
    for &b in &breaks {
        if mass(b) >= 1.0 {
            scale = Some(solve_segment(&normalized, lo, hi, left, b));
            break;
        }
        left = b;
    }
    // Only reachable when every positive entry is capped below one in total,
    // which feasibility rules out up to rounding.
    let s = scale.unwrap_or(left);
    Ok(WeightVector(normalized.iter().map(|&v| (s * v).clamp(lo, hi)).collect()))
}

/// Solves `sum clamp(s v_k) = 1` for `s` in `[left, right]`, where the set of
/// clamped entries is constant on the open segment.
fn solve_segment(v: &[f64], lo: f64, hi: f64, left: f64, right: f64) -> f64 {
    let mid = 0.5 * (left + right);
    let mut fixed = 0.0;
    let mut slope = 0.0;
    for &vi in v {
        let x = mid * vi;
        if x <= lo {
            fixed += lo;
        } else if x >= hi {
            fixed += hi;
        } else {
            slope += vi;
        }
    }
    if slope <= 0.0 {
        return right;
    }
    ((1.0 - fixed) / slope).clamp(left, right)
}
