//! Task-scale Pareto compatibility on convex toy instances: every scalarized
//! grid minimizer must be nondominated among all grid points.

use serde::Serialize;

use crate::error::{Error, Result};

/// Separable convex quadratic `sum_d curvature_d * (theta_d - center_d)^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticLoss {
    pub center: Vec<f64>,
    pub curvature: Vec<f64>,
}

impl QuadraticLoss {
    pub fn new(center: Vec<f64>, curvature: Vec<f64>) -> Result<Self> {
        if center.len() != curvature.len() {
            return Err(Error::DimensionMismatch { expected: center.len(), got: curvature.len() });
        }
        if curvature.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::InvalidParameter("quadratic curvatures must be strictly positive".into()));
        }
        Ok(Self { center, curvature })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.center).zip(&self.curvature).map(|((t, c), a)| a * (t - c) * (t - c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarizedPoint {
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub loss1: f64,
    pub loss2: f64,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoCompatReport {
    pub points: Vec<ScalarizedPoint>,
    pub grid_size: usize,
    pub passed: bool,
}

/// Evenly spaced points `lo, lo + step, ..., hi` without accumulated drift.
pub fn grid_axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// For each `lambda`, finds the grid minimizer of
/// `lambda * l1 + (1 - lambda) * l2` and scans the whole grid for a point
/// that dominates it. Ties in the scalarized objective are broken by the
/// objective with the smaller coefficient, then by grid order, so the
/// boundary scalarizations `lambda = 0, 1` pick the nondominated member of a
/// tied set.
pub fn check_pareto_compat(
    l1: &QuadraticLoss,
    l2: &QuadraticLoss,
    axes: &[Vec<f64>],
    lambdas: &[f64],
) -> Result<ParetoCompatReport> {
    if l1.dim() != axes.len() || l2.dim() != axes.len() {
        return Err(Error::DimensionMismatch { expected: axes.len(), got: l1.dim().max(l2.dim()) });
    }
    if axes.iter().any(Vec::is_empty) {
        return Err(Error::InvalidParameter("grid axes must be nonempty".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidParameter(format!("lambda {l} outside [0, 1]")));
    }

    let grid = cartesian(axes);
    let values: Vec<(f64, f64)> = grid.iter().map(|t| (l1.value(t), l2.value(t))).collect();

    let points: Vec<ScalarizedPoint> = lambdas
        .iter()
        .map(|&lambda| {
            let scalar = |(a, b): (f64, f64)| lambda * a + (1.0 - lambda) * b;
            let secondary = |(a, b): (f64, f64)| if lambda >= 0.5 { b } else { a };
            let best = (0..grid.len())
                .min_by(|&i, &j| {
                    scalar(values[i])
                        .total_cmp(&scalar(values[j]))
                        .then(secondary(values[i]).total_cmp(&secondary(values[j])))
                })
                .expect("nonempty grid");
            let (a, b) = values[best];
            let dominated = values.iter().any(|&(x, y)| x <= a && y <= b && (x < a || y < b));
            ScalarizedPoint { lambda, theta: grid[best].clone(), loss1: a, loss2: b, dominated }
        })
        .collect();
    let passed = points.iter().all(|p| !p.dominated);
    Ok(ParetoCompatReport { points, grid_size: grid.len(), passed })
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lambdas(n: usize) -> Vec<f64> {
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }

    #[test]
    fn one_dimensional_opposed_losses() {
        let l1 = QuadraticLoss::new(vec![1.0], vec![1.0]).unwrap();
        let l2 = QuadraticLoss::new(vec![-1.0], vec![1.0]).unwrap();
        let axis = grid_axis(-2.0, 2.0, 0.01);
        assert_eq!(axis.len(), 401);
        let r = check_pareto_compat(&l1, &l2, &[axis], &[0.5, 1.0]).unwrap();
        assert!(r.passed);
        assert!(r.points[0].theta[0].abs() < 1e-9);
        assert!((r.points[1].theta[0] - 1.0).abs() < 1e-9);
        assert!(r.points[1].loss1 < 1e-12);
    }

    #[test]
    fn two_dimensional_sweep() {
        let l1 = QuadraticLoss::new(vec![1.0, -0.5], vec![1.0, 3.0]).unwrap();
        let l2 = QuadraticLoss::new(vec![-1.0, 0.7], vec![2.0, 0.5]).unwrap();
        let axis = grid_axis(-2.0, 2.0, 0.05);
        let r = check_pareto_compat(&l1, &l2, &[axis.clone(), axis], &lambdas(20)).unwrap();
        assert_eq!(r.grid_size, 81 * 81);
        assert!(r.passed, "{:?}", r.points.iter().find(|p| p.dominated));
    }

    #[test]
    fn tied_boundary_minimizers_pick_nondominated_point() {
        // l1 has two grid minimizers (0.0 and 1.0); only 1.0 is nondominated
        let l1 = QuadraticLoss::new(vec![0.5], vec![1.0]).unwrap();
        let l2 = QuadraticLoss::new(vec![2.0], vec![1.0]).unwrap();
        let axis = grid_axis(-1.0, 3.0, 1.0);
        let r = check_pareto_compat(&l1, &l2, &[axis], &[1.0]).unwrap();
        assert!(r.passed);
        assert_eq!(r.points[0].theta, vec![1.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let l1 = QuadraticLoss::new(vec![1.0], vec![1.0]).unwrap();
        assert!(QuadraticLoss::new(vec![1.0], vec![0.0]).is_err());
        assert!(check_pareto_compat(&l1, &l1, &[vec![0.0], vec![0.0]], &[0.5]).is_err());
        assert!(check_pareto_compat(&l1, &l1, &[vec![0.0]], &[1.5]).is_err());
    }
}
