//! Weight-space update map, fixed-point iteration and sampled contraction
//! estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{cross_entropy, softmax, Sampler, WeightBounds, WeightVector, World};
use crate::error::{Error, Result};
use crate::operators::clip_normalize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightUpdateConfig {
    /// Step toward the feedback target, in `(0, 1]`.
    pub beta: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for WeightUpdateConfig {
    fn default() -> Self {
        Self { beta: 0.3, max_iters: 10_000, tol: 1e-10 }
    }
}

impl WeightUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParameter(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("need max_iters >= 1 and tol > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointTrace {
    /// `w(0), w(1), ...`
    pub iterates: Vec<WeightVector>,
    /// `distances[n - 1] = |w(n) - w(n-1)|_inf`
    pub distances: Vec<f64>,
    /// Geometric mean of successive distance ratios.
    pub rho_hat: f64,
    pub converged: bool,
}

impl FixedPointTrace {
    pub fn fixed_point(&self) -> &WeightVector {
        self.iterates.last().expect("trace holds the starting point")
    }

    pub fn iterations(&self) -> usize {
        self.distances.len()
    }

    /// Largest value of `|w(n) - w*| / (rho^n |w(0) - w*|)` over the trace,
    /// with `w*` the terminal iterate. At most `1 + 1e-6` inside the
    /// geometric envelope.
    pub fn envelope_ratio(&self, rho: f64) -> f64 {
        let star = self.fixed_point();
        let e0 = self.iterates[0].max_abs_diff(star);
        if e0 == 0.0 {
            return 0.0;
        }
        self.iterates
            .iter()
            .enumerate()
            .map(|(n, w)| w.max_abs_diff(star) / (rho.powi(n as i32) * e0))
            .fold(0.0, f64::max)
    }
}

/// Per-teacher feedback `-E[CE(q_w, p_k)]` where `q_w` is the plain
/// `w`-mixture of the teachers, averaged over inputs and contexts.
pub fn feedback(w: &WeightVector, world: &World) -> Result<Vec<f64>> {
    let k = world.k();
    if w.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: w.len() });
    }
    let marginal = world.input_marginal();
    let mut fb = vec![0.0; k];
    for (x, &px) in marginal.iter().enumerate() {
        for (c, ctx) in world.contexts.iter().enumerate() {
            let mass = px * ctx.measure_weight;
            if mass <= 0.0 {
                continue;
            }
            let dists = world.bank.dists(x, c);
            let mut q = vec![0.0; world.vocab_size()];
            for (wj, d) in w.0.iter().zip(dists) {
                for (qi, p) in q.iter_mut().zip(d.probs()) {
                    *qi += wj * p;
                }
            }
            for (f, d) in fb.iter_mut().zip(dists) {
                *f -= mass * cross_entropy(&q, d.probs());
            }
        }
    }
    if fb.iter().any(|f| !f.is_finite()) {
        return Err(Error::InvalidWorld(
            "feedback is undefined: a teacher assigns zero mass where the ensemble does not".into(),
        ));
    }
    Ok(fb)
}

/// `T(w) = clip_normalize((1 - beta) w + beta softmax(feedback(w)))`.
pub fn weight_update_t(w: &WeightVector, beta: f64, world: &World, bounds: &WeightBounds) -> Result<WeightVector> {
    let target = softmax(&feedback(w, world)?);
    let blended: Vec<f64> = w.0.iter().zip(&target).map(|(a, b)| (1.0 - beta) * a + beta * b).collect();
    clip_normalize(&blended, bounds)
}

pub fn iterate_to_fixed_point(
    w0: &WeightVector,
    config: &WeightUpdateConfig,
    world: &World,
    bounds: &WeightBounds,
) -> Result<FixedPointTrace> {
    config.validate()?;
    let mut iterates = vec![w0.clone()];
    let mut distances = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let prev = iterates.last().expect("nonempty");
        let next = weight_update_t(prev, config.beta, world, bounds)?;
        let d = next.max_abs_diff(prev);
        iterates.push(next);
        distances.push(d);
        if d <= config.tol {
            converged = true;
            break;
        }
    }
    let rho_hat = match (distances.first(), distances.last()) {
        (Some(&a), Some(&b)) if distances.len() > 1 && a > 0.0 && b > 0.0 => {
            (b / a).powf(1.0 / (distances.len() - 1) as f64)
        }
        _ => 0.0,
    };
    Ok(FixedPointTrace { iterates, distances, rho_hat, converged })
}

/// A random point of the feasible weight set.
pub fn random_feasible(k: usize, bounds: &WeightBounds, sampler: &mut Sampler) -> Result<WeightVector> {
    let raw: Vec<f64> = (0..k).map(|_| -(1.0 - sampler.uniform()).ln() + 1e-12).collect();
    clip_normalize(&raw, bounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionEstimate {
    pub rho_hat: f64,
    pub pairs: usize,
}

/// `max |T(w) - T(w')|_inf / |w - w'|_inf` over sampled feasible pairs: half
/// independent pairs, half close pairs around a random point, plus
/// consecutive iterates of a trajectory from the uniform start.
pub fn estimate_contraction(
    config: &WeightUpdateConfig,
    world: &World,
    bounds: &WeightBounds,
    n_pairs: usize,
    sampler: &mut Sampler,
) -> Result<ContractionEstimate> {
    config.validate()?;
    let k = world.k();
    let mut pairs: Vec<(WeightVector, WeightVector)> = Vec::with_capacity(n_pairs + 64);
    for n in 0..n_pairs.max(1) {
        let a = random_feasible(k, bounds, sampler)?;
        let b = if n % 2 == 0 {
            random_feasible(k, bounds, sampler)?
        } else {
            let scale = 10f64.powf(sampler.uniform_range(-4.0, -2.0));
            let nudged: Vec<f64> = a.0.iter().map(|v| v * (1.0 + scale * sampler.uniform_range(-1.0, 1.0))).collect();
            clip_normalize(&nudged, bounds)?
        };
        pairs.push((a, b));
    }
    let mut w = WeightVector::uniform(k);
    bounds.check_feasible(k)?;
    for _ in 0..64 {
        let next = weight_update_t(&w, config.beta, world, bounds)?;
        pairs.push((w, next.clone()));
        w = next;
    }
    let ratios: Vec<f64> = pairs
        .par_iter()
        .map(|(a, b)| -> Result<f64> {
            let d = a.max_abs_diff(b);
            // below this the ratio is rounding noise
            if d < 1e-7 {
                return Ok(0.0);
            }
            let ta = weight_update_t(a, config.beta, world, bounds)?;
            let tb = weight_update_t(b, config.beta, world, bounds)?;
            Ok(ta.max_abs_diff(&tb) / d)
        })
        .collect::<Result<_>>()?;
    Ok(ContractionEstimate { rho_hat: ratios.into_iter().fold(0.0, f64::max), pairs: pairs.len() })
}

/// Copy of `world` in which every teacher equals teacher 0, so the feedback
/// target is constant.
pub fn constant_target_world(world: &World) -> World {
    let mut copy = world.clone();
    for x in 0..world.inputs.len() {
        for c in 0..world.contexts.len() {
            let cell = copy.bank.dists_mut(x, c);
            let first = cell[0].clone();
            for d in cell.iter_mut() {
                *d = first.clone();
            }
        }
    }
    copy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SyntheticWorld, TokenDistribution};
    use approx::assert_abs_diff_eq;

    fn bounds() -> WeightBounds {
        WeightBounds::new(0.05, 0.9, 10.0).unwrap()
    }

    #[test]
    fn constant_target_is_affine() {
        let world = constant_target_world(&SyntheticWorld::toy(0).generate().unwrap());
        let mut s = Sampler::new(0);
        for beta in [0.1, 0.3, 0.7] {
            let config = WeightUpdateConfig { beta, ..Default::default() };
            let est = estimate_contraction(&config, &world, &bounds(), 200, &mut s).unwrap();
            assert_abs_diff_eq!(est.rho_hat, 1.0 - beta, epsilon = 1e-9);
        }
        let w = WeightVector(vec![0.2, 0.3, 0.5]);
        let t = weight_update_t(&w, 0.3, &world, &bounds()).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(t[k], 0.7 * w[k] + 0.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn full_step_on_constant_target_converges_at_once() {
        let world = constant_target_world(&SyntheticWorld::toy(0).generate().unwrap());
        let config = WeightUpdateConfig { beta: 1.0, ..Default::default() };
        let trace = iterate_to_fixed_point(&WeightVector(vec![0.6, 0.3, 0.1]), &config, &world, &bounds()).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations(), 2);
        assert!(trace.fixed_point().max_abs_diff(&WeightVector::uniform(3)) < 1e-15);
    }

    #[test]
    fn toy_world_contracts_and_has_unique_fixed_point() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let config = WeightUpdateConfig::default();
        let mut s = Sampler::new(1);
        let est = estimate_contraction(&config, &world, &bounds(), 200, &mut s).unwrap();
        assert!(est.rho_hat < 1.0, "{est:?}");
        let a = iterate_to_fixed_point(&WeightVector::uniform(3), &config, &world, &bounds()).unwrap();
        let b = iterate_to_fixed_point(&WeightVector(vec![0.8, 0.1, 0.1]), &config, &world, &bounds()).unwrap();
        assert!(a.converged && b.converged);
        assert!(a.fixed_point().max_abs_diff(b.fixed_point()) < 1e-6);
        assert!(a.envelope_ratio(est.rho_hat) <= 1.0 + 1e-6);

        let again = iterate_to_fixed_point(a.fixed_point(), &config, &world, &bounds()).unwrap();
        assert_eq!(again.iterations(), 1);
        assert!(again.distances[0] <= config.tol);
    }

    #[test]
    fn closure_of_feasible_set() {
        let world = SyntheticWorld::toy(2).generate().unwrap();
        let b = WeightBounds::new(0.2, 0.5, 1.0).unwrap();
        let mut s = Sampler::new(4);
        for _ in 0..100 {
            let w = random_feasible(3, &b, &mut s).unwrap();
            let t = weight_update_t(&w, 0.5, &world, &b).unwrap();
            assert!(t.is_normalized(1e-12) && t.within(0.2, 0.5, 1e-12));
        }
    }

    #[test]
    fn opposed_sharp_teachers_do_not_contract() {
        let mut world = crate::test_support::appendix_world([0.5, 0.5]);
        *world.bank.dists_mut(0, 0) = vec![
            TokenDistribution::new(vec![0.998, 0.001, 0.001]).unwrap(),
            TokenDistribution::new(vec![0.001, 0.001, 0.998]).unwrap(),
        ];
        let config = WeightUpdateConfig { beta: 1.0, max_iters: 500, ..Default::default() };
        let b = bounds();
        let est = estimate_contraction(&config, &world, &b, 200, &mut Sampler::new(0)).unwrap();
        assert!(est.rho_hat >= 1.0);
        let left = iterate_to_fixed_point(&WeightVector(vec![0.45, 0.55]), &config, &world, &b).unwrap();
        let right = iterate_to_fixed_point(&WeightVector(vec![0.55, 0.45]), &config, &world, &b).unwrap();
        assert!(left.fixed_point().max_abs_diff(right.fixed_point()) > 0.5);
    }
}
