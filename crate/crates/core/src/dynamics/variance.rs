//! Single-sample gradient variance under adaptive and uniform weighting.

use serde::Serialize;

use crate::composition::{mix_target, CellWeights, UnifiedWeightOperator};
use crate::domain::{softmax, Sampler, StudentParams, World};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceReport {
    /// Trace of the single-sample gradient covariance under the operator.
    pub measured: f64,
    /// Same under uniform weights, on the same samples.
    pub base: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// `(w_max / w_min)^2 * base`
    pub bound: f64,
    pub samples: usize,
}

impl VarianceReport {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound
    }

    pub fn ratio(&self) -> f64 {
        self.measured / self.base
    }
}

/// Accumulates the trace of a sample covariance of the per-sample gradient
/// row `softmax(theta_x) - q` (the ridge part is deterministic).
struct TraceCovariance {
    n: usize,
    mean: Vec<Vec<f64>>,
    m2: f64,
}

impl TraceCovariance {
    fn new(n_inputs: usize, vocab: usize) -> Self {
        Self { n: 0, mean: vec![vec![0.0; vocab]; n_inputs], m2: 0.0 }
    }

    /// Welford update for a sample that is zero outside row `x`.
    fn push(&mut self, x: usize, row: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for (r, mean_row) in self.mean.iter_mut().enumerate() {
            for (i, m) in mean_row.iter_mut().enumerate() {
                let v = if r == x { row[i] } else { 0.0 };
                let d = v - *m;
                *m += d / n;
                self.m2 += d * (v - *m);
            }
        }
    }

    fn trace(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

pub fn gradient_variance_ratio(
    g: &UnifiedWeightOperator,
    world: &World,
    theta: &StudentParams,
    n_samples: usize,
    sampler: &mut Sampler,
) -> Result<VarianceReport> {
    if n_samples < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 samples, got {n_samples}")));
    }
    theta.check_shape(world.inputs.len(), world.vocab_size())?;
    let uniform = UnifiedWeightOperator::uniform(g.bounds)?;
    let n_ctx = world.contexts.len();
    let n_in = world.inputs.len();
    let mut cache: Vec<Option<(CellWeights, CellWeights)>> = vec![None; world.tasks.len() * n_in * n_ctx];
    let mut adaptive = TraceCovariance::new(n_in, world.vocab_size());
    let mut base = TraceCovariance::new(n_in, world.vocab_size());
    let (mut w_min, mut w_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..n_samples {
        let (t, x, c) = world.sample_point(sampler);
        let slot = &mut cache[(t * n_in + x) * n_ctx + c];
        if slot.is_none() {
            *slot = Some((g.cell_weights(world, x, t, c)?, uniform.cell_weights(world, x, t, c)?));
        }
        let (gw, uw) = slot.as_ref().expect("filled above");
        for w in &gw.groups {
            w_min = w_min.min(w.min());
            w_max = w_max.max(w.max());
        }
        let p = softmax(&theta.logits[x]);
        let dists = world.bank.dists(x, c);
        let qa = mix_target(gw, dists)?;
        let qu = mix_target(uw, dists)?;
        let ra: Vec<f64> = p.iter().zip(qa.probs()).map(|(a, b)| a - b).collect();
        let ru: Vec<f64> = p.iter().zip(qu.probs()).map(|(a, b)| a - b).collect();
        adaptive.push(x, &ra);
        base.push(x, &ru);
    }
    let base_var = base.trace();
    Ok(VarianceReport {
        measured: adaptive.trace(),
        base: base_var,
        w_min,
        w_max,
        bound: (w_max / w_min).powi(2) * base_var,
        samples: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SyntheticWorld, WeightBounds};
    use crate::operators::{Family, FamilyParams};

    fn bounds() -> WeightBounds {
        WeightBounds::new(0.05, 0.9, 10.0).unwrap()
    }

    #[test]
    fn uniform_operator_matches_base_exactly() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let g = UnifiedWeightOperator::uniform(bounds()).unwrap();
        let theta = StudentParams::zeros(8, 10, 0.0);
        let r = gradient_variance_ratio(&g, &world, &theta, 2_000, &mut Sampler::new(0)).unwrap();
        assert_eq!(r.measured, r.base);
        assert_eq!(r.bound, r.base);
    }

    #[test]
    fn adaptive_families_respect_bound() {
        let world = SyntheticWorld::toy(1).generate().unwrap();
        let theta = StudentParams::zeros(8, 10, 0.0);
        for family in [Family::InverseEntropy, Family::FamilyA, Family::FamilyB, Family::FamilyC] {
            let g = UnifiedWeightOperator::same_family(family, FamilyParams::default(), bounds()).unwrap();
            let r = gradient_variance_ratio(&g, &world, &theta, 10_000, &mut Sampler::new(2)).unwrap();
            assert!(r.holds(), "{family}: {r:?}");
            assert!(r.w_min > 0.0 && r.w_max < 1.0);
        }
    }

    #[test]
    fn single_cell_world_still_bounded() {
        let world = crate::test_support::appendix_world([0.9, 0.2]);
        let theta = StudentParams::zeros(1, 3, 0.0);
        let g = UnifiedWeightOperator::same_family(Family::FamilyA, FamilyParams::default(), bounds()).unwrap();
        let r = gradient_variance_ratio(&g, &world, &theta, 1_000, &mut Sampler::new(0)).unwrap();
        assert!(r.holds());
        assert!(r.measured < 1e-20 && r.base < 1e-20);
    }

    #[test]
    fn welford_matches_two_pass() {
        let mut acc = TraceCovariance::new(2, 2);
        let samples = [(0, [1.0, -1.0]), (1, [0.5, 0.25]), (0, [0.0, 2.0]), (1, [-1.0, 1.0])];
        for (x, row) in &samples {
            acc.push(*x, row);
        }
        let flat: Vec<[f64; 4]> = samples
            .iter()
            .map(|(x, r)| if *x == 0 { [r[0], r[1], 0.0, 0.0] } else { [0.0, 0.0, r[0], r[1]] })
            .collect();
        let mean: Vec<f64> = (0..4).map(|j| flat.iter().map(|f| f[j]).sum::<f64>() / 4.0).collect();
        let two_pass: f64 =
            flat.iter().map(|f| (0..4).map(|j| (f[j] - mean[j]).powi(2)).sum::<f64>()).sum::<f64>() / 3.0;
        assert!((acc.trace() - two_pass).abs() < 1e-14);
    }
}
