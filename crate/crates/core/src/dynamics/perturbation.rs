//! Sensitivity of the distilled solution to perturbed teacher weights.

use rayon::prelude::*;
use serde::Serialize;

use crate::composition::{mix_target, UnifiedWeightOperator};
use crate::distill::{check_margin, origin_fit, OriginFit, TargetTable, TrainerConfig};
use crate::domain::{Sampler, WeightVector, World};
use crate::error::{Error, Result};

/// Gradient-norm tolerance of both solves.
pub const SOLVE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationRow {
    pub delta: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    /// Zero-sum perturbation direction with unit sup norm.
    pub direction: Vec<f64>,
    pub rows: Vec<PerturbationRow>,
    /// Fit of distance against delta through the origin over nonzero deltas.
    pub fit: Option<OriginFit>,
    /// `max / min` of `distance / delta` over nonzero deltas.
    pub ratio_spread: f64,
    /// Distances are nondecreasing in delta.
    pub monotone: bool,
}

/// A zero-sum direction of unit sup norm.
pub fn random_direction(k: usize, sampler: &mut Sampler) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidParameter("a zero-sum direction needs K >= 2".into()));
    }
    loop {
        let raw: Vec<f64> = (0..k).map(|_| sampler.uniform_range(-1.0, 1.0)).collect();
        let mean = raw.iter().sum::<f64>() / k as f64;
        let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let top = centered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if top > 1e-3 {
            return Ok(centered.iter().map(|v| v / top).collect());
        }
    }
}

/// Solves the clean problem and, for each `delta`, the problem whose unified
/// weights are moved by `delta * direction` and renormalized; reports the
/// distance between the two minimizers.
pub fn perturbation_experiment(
    g: &UnifiedWeightOperator,
    world: &World,
    deltas: &[f64],
    config: &TrainerConfig,
    sampler: &mut Sampler,
) -> Result<PerturbationReport> {
    config.validate()?;
    let largest = deltas.iter().copied().fold(0.0, f64::max);
    let cells = check_margin(g, world, largest)?;
    let direction = random_direction(world.k(), sampler)?;
    let clean = TargetTable::build(g, world)?.solve(config.ridge, SOLVE_TOL)?;

    let rows: Vec<PerturbationRow> = deltas
        .par_iter()
        .map(|&delta| -> Result<PerturbationRow> {
            if delta == 0.0 {
                return Ok(PerturbationRow { delta, distance: 0.0 });
            }
            let points = world.joint();
            let mut cursor = 0;
            let table = TargetTable::from_fn(world, |_, x, c| {
                let cell = cells[cursor].map(|w| {
                    let moved: Vec<f64> = w.0.iter().zip(&direction).map(|(v, u)| v + delta * u).collect();
                    let total: f64 = moved.iter().sum();
                    Ok(WeightVector(moved.iter().map(|v| v / total).collect()))
                })?;
                debug_assert_eq!((points[cursor].input, points[cursor].context), (x, c));
                cursor += 1;
                mix_target(&cell, world.bank.dists(x, c))
            })?;
            let solved = table.solve_from(&clean.params, SOLVE_TOL)?;
            Ok(PerturbationRow { delta, distance: solved.params.distance(&clean.params) })
        })
        .collect::<Result<_>>()?;

    let nonzero: Vec<&PerturbationRow> = rows.iter().filter(|r| r.delta > 0.0).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = nonzero.iter().map(|r| (r.delta, r.distance)).unzip();
    let fit = if xs.is_empty() { None } else { Some(origin_fit(&xs, &ys)?) };
    let ratios: Vec<f64> = nonzero.iter().map(|r| r.distance / r.delta).collect();
    let ratio_spread = if ratios.is_empty() {
        1.0
    } else {
        ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let monotone = sorted.windows(2).all(|w| w[1].distance >= w[0].distance);
    Ok(PerturbationReport { direction, rows, fit, ratio_spread, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SyntheticWorld, WeightBounds};
    use crate::operators::{Family, FamilyParams};

    #[test]
    fn direction_is_zero_sum_unit() {
        let mut s = Sampler::new(0);
        let d = random_direction(4, &mut s).unwrap();
        assert!(d.iter().sum::<f64>().abs() < 1e-12);
        assert!((d.iter().fold(0.0f64, |m, v| m.max(v.abs())) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distances_scale_linearly() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let bounds = WeightBounds::new(0.05, 0.9, 10.0).unwrap();
        let g = UnifiedWeightOperator::uniform(bounds).unwrap();
        let config = TrainerConfig::default();
        let r = perturbation_experiment(&g, &world, &[0.0, 1e-3, 1e-2, 1e-1], &config, &mut Sampler::new(0)).unwrap();
        assert_eq!(r.rows[0].distance, 0.0);
        assert!(r.monotone);
        assert!(r.fit.unwrap().r_squared >= 0.95, "{r:?}");
        assert!(r.ratio_spread <= 3.0, "{r:?}");
    }

    #[test]
    fn adaptive_operator_small_deltas() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let bounds = WeightBounds::new(0.2, 0.5, 10.0).unwrap();
        let g = UnifiedWeightOperator::same_family(Family::FamilyA, FamilyParams::default(), bounds).unwrap();
        let r =
            perturbation_experiment(&g, &world, &[1e-3, 1e-2, 5e-2], &TrainerConfig::default(), &mut Sampler::new(3))
                .unwrap();
        assert!(r.monotone);
        assert!(r.ratio_spread <= 3.0, "{r:?}");
    }

    #[test]
    fn oversized_delta_is_rejected() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let bounds = WeightBounds::new(0.05, 0.9, 10.0).unwrap();
        let g = UnifiedWeightOperator::uniform(bounds).unwrap();
        let r = perturbation_experiment(&g, &world, &[0.5], &TrainerConfig::default(), &mut Sampler::new(0));
        assert!(matches!(r, Err(Error::MarginViolated { .. })));
    }
}
