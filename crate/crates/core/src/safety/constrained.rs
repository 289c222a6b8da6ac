//! Safety-constrained distillation: Lagrangian, dual ascent, KKT residuals
//! and the multiplier sweep.

use std::io::Write;

use serde::Serialize;

use super::measure::{SafetyConfig, SafetyForm, SafetyScope};
use crate::composition::UnifiedWeightOperator;
use crate::distill::optim::{minimize, norm};
use crate::distill::{TargetTable, TrainerConfig};
use crate::domain::{StudentParams, World};
use crate::error::{Error, Result};

/// Gradient-norm tolerance of every inner minimization.
pub const INNER_TOL: f64 = 1e-8;
/// Feasibility and slackness tolerance of the outer loop.
pub const RESIDUAL_TOL: f64 = 1e-3;
/// Slack of the feasibility pre-check.
pub const FEASIBILITY_SLACK: f64 = 1e-6;

/// The KD table and the safety form of one problem, built once.
#[derive(Debug, Clone)]
pub struct SafetyProblem {
    pub table: TargetTable,
    form: SafetyForm,
    pub s_min: f64,
}

impl SafetyProblem {
    pub fn new(g: &UnifiedWeightOperator, world: &World, safety: &SafetyConfig) -> Result<Self> {
        safety.validate()?;
        Ok(Self {
            table: TargetTable::build(g, world)?,
            form: SafetyForm::build(world, safety, SafetyScope::All)?,
            s_min: safety.s_min,
        })
    }

    pub fn kd_loss(&self, theta: &StudentParams) -> Result<f64> {
        self.table.loss(theta)
    }

    pub fn safety(&self, theta: &StudentParams) -> Result<f64> {
        self.form.value(theta)
    }

    pub fn max_safety(&self) -> f64 {
        self.form.supremum()
    }

    pub fn lagrangian(&self, theta: &StudentParams, mu: f64) -> Result<f64> {
        if mu < 0.0 {
            return Err(Error::NegativeMultiplier(mu));
        }
        Ok(self.kd_loss(theta)? - mu * self.safety(theta)?)
    }

    /// `grad L_KD - mu * grad Safety`, flattened.
    pub fn lagrangian_gradient(&self, theta: &StudentParams, mu: f64) -> Result<Vec<f64>> {
        let kd = self.table.gradient(theta)?;
        let s = self.form.gradient(theta)?;
        Ok(kd.iter().flatten().zip(s.iter().flatten()).map(|(a, b)| a - mu * b).collect())
    }

    /// Minimizes the Lagrangian in `theta` from `start`.
    pub fn minimize_lagrangian(&self, start: &StudentParams, mu: f64) -> Result<StudentParams> {
        if mu < 0.0 {
            return Err(Error::NegativeMultiplier(mu));
        }
        let ridge = start.ridge;
        let f = |v: &[f64]| {
            let theta = self.table.params_from_flat(v, ridge);
            let value = self.lagrangian(&theta, mu).unwrap_or(f64::NAN);
            let grad = self.lagrangian_gradient(&theta, mu).unwrap_or_else(|_| vec![f64::NAN; v.len()]);
            (value, grad)
        };
        let m = minimize(f, start.flat(), INNER_TOL, 200_000);
        Ok(self.table.params_from_flat(&m.x, ridge))
    }

    pub fn kkt(&self, theta: &StudentParams, mu: f64) -> Result<KktResiduals> {
        let safety = self.safety(theta)?;
        Ok(KktResiduals {
            stationarity: norm(&self.lagrangian_gradient(theta, mu)?),
            slackness: (mu * (safety - self.s_min)).abs(),
            primal: (self.s_min - safety).max(0.0),
            dual: (-mu).max(0.0),
        })
    }
}

pub fn lagrangian_value(
    theta: &StudentParams,
    mu: f64,
    g: &UnifiedWeightOperator,
    world: &World,
    safety: &SafetyConfig,
) -> Result<f64> {
    if mu < 0.0 {
        return Err(Error::NegativeMultiplier(mu));
    }
    SafetyProblem::new(g, world, safety)?.lagrangian(theta, mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub slackness: f64,
    pub primal: f64,
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.slackness).max(self.primal).max(self.dual)
    }
}

/// Residuals at a given pair. Unlike [`lagrangian_value`], a negative `mu`
/// is accepted and shows up as dual violation.
pub fn kkt_residuals(
    theta: &StudentParams,
    mu: f64,
    g: &UnifiedWeightOperator,
    world: &World,
    safety: &SafetyConfig,
) -> Result<KktResiduals> {
    SafetyProblem::new(g, world, safety)?.kkt(theta, mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualStep {
    pub iteration: usize,
    pub mu: f64,
    pub kd_loss: f64,
    pub safety: f64,
    pub primal: f64,
    pub slackness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSolution {
    pub theta: StudentParams,
    pub mu: f64,
    pub history: Vec<DualStep>,
    pub max_safety: f64,
}

pub fn dual_ascent_solve(
    g: &UnifiedWeightOperator,
    world: &World,
    safety: &SafetyConfig,
    trainer: &TrainerConfig,
) -> Result<DualSolution> {
    trainer.validate()?;
    let problem = SafetyProblem::new(g, world, safety)?;
    let max_safety = problem.max_safety();
    if max_safety < safety.s_min - FEASIBILITY_SLACK {
        return Err(Error::Infeasible { s_min: safety.s_min, max_safety });
    }
    let mut theta = StudentParams::zeros(world.inputs.len(), world.vocab_size(), trainer.ridge);
    let mut mu = 0.0;
    let mut history = Vec::new();
    for iteration in 0..safety.max_dual_iters {
        theta = problem.minimize_lagrangian(&theta, mu)?;
        let s = problem.safety(&theta)?;
        let step = DualStep {
            iteration,
            mu,
            kd_loss: problem.kd_loss(&theta)?,
            safety: s,
            primal: (safety.s_min - s).max(0.0),
            slackness: (mu * (s - safety.s_min)).abs(),
        };
        history.push(step);
        if step.primal <= RESIDUAL_TOL && step.slackness <= RESIDUAL_TOL {
            return Ok(DualSolution { theta, mu, history, max_safety });
        }
        mu = (mu + safety.dual_step * (safety.s_min - s)).max(0.0);
    }
    Err(Error::DualStall { iters: safety.max_dual_iters })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub mu: f64,
    pub kd_loss: f64,
    pub safety: f64,
}

/// Minimizes the Lagrangian at each multiplier of an ascending grid, warm
/// starting from the previous minimizer.
pub fn pareto_sweep(
    g: &UnifiedWeightOperator,
    world: &World,
    safety: &SafetyConfig,
    trainer: &TrainerConfig,
    mu_grid: &[f64],
) -> Result<Vec<ParetoPoint>> {
    if let Some(&mu) = mu_grid.iter().find(|&&m| m < 0.0) {
        return Err(Error::NegativeMultiplier(mu));
    }
    if mu_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("multiplier grid must be ascending".into()));
    }
    let problem = SafetyProblem::new(g, world, safety)?;
    let mut theta = StudentParams::zeros(world.inputs.len(), world.vocab_size(), trainer.ridge);
    let mut points = Vec::with_capacity(mu_grid.len());
    for &mu in mu_grid {
        theta = problem.minimize_lagrangian(&theta, mu)?;
        points.push(ParetoPoint { mu, kd_loss: problem.kd_loss(&theta)?, safety: problem.safety(&theta)? });
    }
    Ok(points)
}

/// Safety and KD loss are both nondecreasing along the sweep, up to `tol`.
pub fn sweep_is_monotone(points: &[ParetoPoint], tol: f64) -> bool {
    points.windows(2).all(|w| w[1].safety >= w[0].safety - tol && w[1].kd_loss >= w[0].kd_loss - tol)
}

pub fn write_pareto_csv<W: Write>(points: &[ParetoPoint], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["mu", "kd_loss", "safety"])?;
    for p in points {
        writer.write_record([format!("{:.16e}", p.mu), format!("{:.16e}", p.kd_loss), format!("{:.16e}", p.safety)])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SyntheticWorld, WeightBounds};
    use crate::operators::{Family, FamilyParams};
    use approx::assert_abs_diff_eq;

    fn setup(seed: u64) -> (World, UnifiedWeightOperator, SafetyConfig, TrainerConfig) {
        let world = SyntheticWorld::toy(seed).generate().unwrap();
        let bounds = WeightBounds::new(0.05, 0.9, 10.0).unwrap();
        let g = UnifiedWeightOperator::same_family(Family::FamilyA, FamilyParams::default(), bounds).unwrap();
        let safety = SafetyConfig::new(0.5, SafetyConfig::synthetic_labels(&world, seed)).unwrap();
        (world, g, safety, TrainerConfig::default())
    }

    fn with_s_min(safety: &SafetyConfig, s_min: f64) -> SafetyConfig {
        SafetyConfig { s_min, ..safety.clone() }
    }

    fn unconstrained(world: &World, g: &UnifiedWeightOperator, ridge: f64) -> StudentParams {
        TargetTable::build(g, world).unwrap().solve(ridge, INNER_TOL).unwrap().params
    }

    #[test]
    fn lagrangian_composition() {
        let (world, g, safety, _) = setup(0);
        let theta = StudentParams::zeros(8, 10, 0.01);
        let kd = crate::distill::kd_loss(&theta, &g, &world).unwrap();
        let s = super::super::expected_safety(&theta, &world, &safety).unwrap();
        assert_eq!(lagrangian_value(&theta, 0.0, &g, &world, &safety).unwrap(), kd);
        assert_abs_diff_eq!(lagrangian_value(&theta, 2.5, &g, &world, &safety).unwrap(), kd - 2.5 * s, epsilon = 1e-12);
        assert_eq!(lagrangian_value(&theta, -1.0, &g, &world, &safety), Err(Error::NegativeMultiplier(-1.0)));
    }

    #[test]
    fn no_safety_tokens_shift_by_mu() {
        let mut spec = SyntheticWorld::toy(0);
        spec.safety_set.clear();
        let world = spec.generate().unwrap();
        let g = UnifiedWeightOperator::uniform(WeightBounds::new(0.05, 0.9, 10.0).unwrap()).unwrap();
        let safety = SafetyConfig::new(0.5, SafetyConfig::synthetic_labels(&world, 0)).unwrap();
        let theta = StudentParams::zeros(8, 10, 0.01);
        let kd = crate::distill::kd_loss(&theta, &g, &world).unwrap();
        assert_eq!(lagrangian_value(&theta, 1.0, &g, &world, &safety).unwrap(), kd - 1.0);
    }

    #[test]
    fn inactive_threshold_keeps_unconstrained_solution() {
        let (world, g, safety, trainer) = setup(0);
        let free = unconstrained(&world, &g, trainer.ridge);
        let s_free = super::super::expected_safety(&free, &world, &safety).unwrap();
        let loose = with_s_min(&safety, s_free * 0.9);
        let sol = dual_ascent_solve(&g, &world, &loose, &trainer).unwrap();
        assert_eq!(sol.mu, 0.0);
        assert!(sol.theta.distance(&free) < 1e-6);
        let kkt = kkt_residuals(&sol.theta, 0.0, &g, &world, &loose).unwrap();
        assert!(kkt.stationarity <= 1e-8);
        assert_eq!(kkt.slackness, 0.0);
    }

    #[test]
    fn active_threshold_binds() {
        let (world, g, safety, trainer) = setup(1);
        let free = unconstrained(&world, &g, trainer.ridge);
        let s_free = super::super::expected_safety(&free, &world, &safety).unwrap();
        let s_max = super::super::max_achievable_safety(&world, &safety).unwrap();
        let target = s_free + 0.3 * (s_max - s_free);
        let tight = SafetyConfig { dual_step: 5.0, ..with_s_min(&safety, target) };
        let sol = dual_ascent_solve(&g, &world, &tight, &trainer).unwrap();
        assert!(sol.mu > 0.0);
        let last = sol.history.last().unwrap();
        assert!((last.safety - target).abs() <= 1e-3, "{last:?}");
        let kkt = kkt_residuals(&sol.theta, sol.mu, &g, &world, &tight).unwrap();
        assert!(kkt.max() <= 1e-3, "{kkt:?}");
        // feasibility residual never grows once the multiplier moves
        assert!(sol.history[1..].windows(2).all(|w| w[1].primal <= w[0].primal + 1e-12));
    }

    #[test]
    fn default_step_is_slow_but_settles_near_threshold() {
        let (world, g, safety, trainer) = setup(0);
        let free = unconstrained(&world, &g, trainer.ridge);
        let s_free = super::super::expected_safety(&free, &world, &safety).unwrap();
        let tight = with_s_min(&safety, s_free + 0.05 * (1.0 - s_free));
        let sol = dual_ascent_solve(&g, &world, &tight, &trainer).unwrap();
        assert!(sol.history.len() > 50);
        assert!(sol.mu > 0.0);
    }

    #[test]
    fn infeasible_threshold_is_rejected() {
        let (world, g, mut safety, trainer) = setup(0);
        // two different safety labels on one input cap the supremum below 1
        safety.labels.insert((0, 0), 1);
        safety.labels.insert((0, 1), 0);
        let sup = super::super::max_achievable_safety(&world, &safety).unwrap();
        assert!(sup < 1.0);
        let r = dual_ascent_solve(&g, &world, &with_s_min(&safety, 1.0), &trainer);
        assert!(matches!(r, Err(Error::Infeasible { .. })), "{r:?}");
    }

    #[test]
    fn dual_violation_reports_negative_multiplier() {
        let (world, g, safety, _) = setup(0);
        let theta = StudentParams::zeros(8, 10, 0.01);
        assert_eq!(kkt_residuals(&theta, -0.25, &g, &world, &safety).unwrap().dual, 0.25);
    }

    #[test]
    fn sweep_is_monotone_and_starts_unconstrained() {
        let (world, g, safety, trainer) = setup(2);
        let grid: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let points = pareto_sweep(&g, &world, &safety, &trainer, &grid).unwrap();
        assert!(sweep_is_monotone(&points, 1e-9), "{points:?}");
        let free = unconstrained(&world, &g, trainer.ridge);
        assert_abs_diff_eq!(
            points[0].kd_loss,
            TargetTable::build(&g, &world).unwrap().loss(&free).unwrap(),
            epsilon = 1e-12
        );
        let mut buf = Vec::new();
        write_pareto_csv(&points, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mu,kd_loss,safety\n"));
        assert_eq!(text.lines().count(), 21);
    }

    #[test]
    fn sweep_rejects_bad_grid() {
        let (world, g, safety, trainer) = setup(0);
        assert!(pareto_sweep(&g, &world, &safety, &trainer, &[1.0, 0.5]).is_err());
        assert!(pareto_sweep(&g, &world, &safety, &trainer, &[-0.5]).is_err());
    }
}
