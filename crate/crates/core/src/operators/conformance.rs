//! Sampling-based axiom checks for any weighting operator.
//!
//! Normalization, positivity and bounds are checked at every sampled point.
//! Regularity is checked on paired evaluations: every teacher distribution
//! the operator reads is moved by at most 0.01 in total variation (task-scale
//! performance scores by at most the same amount), and the weight change in
//! the sup norm must stay within the declared Lipschitz bound times the size
//! of the move. Safety scores are an ordinal designation and are held fixed.
//! Safety monotonicity is checked on safety tokens (token scale) and
//! safety-critical contexts (context scale).

use std::fmt;

use serde::Serialize;

use super::{ContextOperator, ContextQuery, Family, TaskOperator, TaskQuery, TokenOperator, TokenQuery};
use crate::domain::{Sampler, TokenDistribution, WeightBounds, WeightVector, World};

pub const NORM_TOL: f64 = 1e-9;
pub const BOUND_TOL: f64 = 1e-9;
pub const SAFETY_TOL: f64 = 1e-9;
/// Largest total-variation move used by the regularity check.
pub const MAX_PERTURBATION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Token,
    Task,
    Context,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Token => "token",
            Scale::Task => "task",
            Scale::Context => "context",
        })
    }
}

#[derive(Clone, Copy)]
pub enum OperatorRef<'a> {
    Token(&'a dyn TokenOperator),
    Task(&'a dyn TaskOperator),
    Context(&'a dyn ContextOperator),
}

impl OperatorRef<'_> {
    pub fn scale(&self) -> Scale {
        match self {
            OperatorRef::Token(_) => Scale::Token,
            OperatorRef::Task(_) => Scale::Task,
            OperatorRef::Context(_) => Scale::Context,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            OperatorRef::Token(op) => op.family(),
            OperatorRef::Task(op) => op.family(),
            OperatorRef::Context(op) => op.family(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomCheck {
    pub axiom: &'static str,
    pub passed: bool,
    pub worst_violation: f64,
    pub samples: usize,
    pub worst_point: Option<String>,
}

impl AxiomCheck {
    fn new(axiom: &'static str) -> Self {
        Self { axiom, passed: true, worst_violation: 0.0, samples: 0, worst_point: None }
    }

    fn record(&mut self, violation: f64, failed: bool, point: &str) {
        self.samples += 1;
        if failed {
            self.passed = false;
        }
        if violation > self.worst_violation || (failed && self.worst_point.is_none()) {
            self.worst_violation = self.worst_violation.max(violation);
            self.worst_point = Some(point.to_string());
        }
    }

    fn merge(&mut self, other: &AxiomCheck) {
        self.passed &= other.passed;
        self.samples += other.samples;
        if other.worst_violation > self.worst_violation {
            self.worst_violation = other.worst_violation;
            self.worst_point = other.worst_point.clone();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub scale: Scale,
    pub family: Family,
    pub samples: usize,
    pub normalization: AxiomCheck,
    pub positivity: AxiomCheck,
    pub bounds: AxiomCheck,
    pub regularity: AxiomCheck,
    /// Not applicable at task scale (Pareto compatibility is checked by
    /// [`super::check_pareto_compat`] instead).
    pub safety_monotonicity: Option<AxiomCheck>,
    pub estimated_lipschitz: f64,
    pub declared_lipschitz: f64,
    pub evaluation_errors: usize,
    pub first_error: Option<String>,
}

impl ConformanceReport {
    fn new(scale: Scale, family: Family, declared_lipschitz: f64) -> Self {
        Self {
            scale,
            family,
            samples: 0,
            normalization: AxiomCheck::new("normalization"),
            positivity: AxiomCheck::new("positivity"),
            bounds: AxiomCheck::new("bounded influence"),
            regularity: AxiomCheck::new("regularity"),
            safety_monotonicity: (scale != Scale::Task).then(|| AxiomCheck::new("safety monotonicity")),
            estimated_lipschitz: 0.0,
            declared_lipschitz,
            evaluation_errors: 0,
            first_error: None,
        }
    }

    pub fn checks(&self) -> impl Iterator<Item = &AxiomCheck> {
        [&self.normalization, &self.positivity, &self.bounds, &self.regularity]
            .into_iter()
            .chain(self.safety_monotonicity.as_ref())
    }

    pub fn all_passed(&self) -> bool {
        self.evaluation_errors == 0 && self.checks().all(|c| c.passed)
    }

    /// Combines reports produced by independent workers on the same operator.
    pub fn merge(&mut self, other: &ConformanceReport) {
        self.samples += other.samples;
        self.normalization.merge(&other.normalization);
        self.positivity.merge(&other.positivity);
        self.bounds.merge(&other.bounds);
        self.regularity.merge(&other.regularity);
        if let (Some(a), Some(b)) = (&mut self.safety_monotonicity, &other.safety_monotonicity) {
            a.merge(b);
        }
        self.estimated_lipschitz = self.estimated_lipschitz.max(other.estimated_lipschitz);
        self.evaluation_errors += other.evaluation_errors;
        if self.first_error.is_none() {
            self.first_error = other.first_error.clone();
        }
    }

    fn check_weights(&mut self, w: &WeightVector, bounds: &WeightBounds, point: &str) {
        let norm = (w.sum() - 1.0).abs();
        self.normalization.record(norm, norm > NORM_TOL, point);
        let min = w.min();
        self.positivity.record((-min).max(0.0), !(min > 0.0), point);
        let below = bounds.w_min - w.min();
        let above = w.max() - bounds.w_max;
        let excess = below.max(above).max(0.0);
        self.bounds.record(excess, below > BOUND_TOL || above > BOUND_TOL, point);
    }

    fn check_safety(&mut self, w: &WeightVector, scores: &[f64], point: &str) {
        let Some(check) = self.safety_monotonicity.as_mut() else {
            return;
        };
        let mut worst: f64 = 0.0;
        for (k, sk) in scores.iter().enumerate() {
            for (j, sj) in scores.iter().enumerate() {
                if sk >= sj {
                    worst = worst.max(w[j] - w[k]);
                }
            }
        }
        check.record(worst, worst > SAFETY_TOL, point);
    }

    fn check_regularity(&mut self, base: &WeightVector, moved: &WeightVector, eps: f64, point: &str) {
        if eps < 1e-15 {
            return;
        }
        let ratio = base.max_abs_diff(moved) / eps;
        self.estimated_lipschitz = self.estimated_lipschitz.max(ratio);
        let excess = (ratio - self.declared_lipschitz).max(0.0);
        self.regularity.record(excess, ratio > self.declared_lipschitz, point);
    }

    fn error(&mut self, err: crate::error::Error, point: &str) {
        self.evaluation_errors += 1;
        if self.first_error.is_none() {
            self.first_error = Some(format!("{err} at {point}"));
        }
    }
}

/// Evaluates `op` at `n_samples` random points of `world` and reports every
/// axiom violation found.
pub fn check_conformance(
    op: OperatorRef<'_>,
    world: &World,
    bounds: &WeightBounds,
    sampler: &mut Sampler,
    n_samples: usize,
) -> ConformanceReport {
    let mut report = ConformanceReport::new(op.scale(), op.family(), bounds.lipschitz);
    for _ in 0..n_samples.max(1) {
        report.samples += 1;
        match op {
            OperatorRef::Token(tok) => token_sample(tok, world, bounds, sampler, &mut report),
            OperatorRef::Task(task) => task_sample(task, world, bounds, sampler, &mut report),
            OperatorRef::Context(ctx) => context_sample(ctx, world, bounds, sampler, &mut report),
        }
    }
    report
}

fn token_sample(
    op: &dyn TokenOperator,
    world: &World,
    bounds: &WeightBounds,
    sampler: &mut Sampler,
    report: &mut ConformanceReport,
) {
    let (_, x, c) = world.sample_point(sampler);
    let safety_set = &world.vocab.safety_set;
    let i = if !safety_set.is_empty() && sampler.uniform() < 0.5 {
        safety_set[sampler.index(safety_set.len())]
    } else {
        sampler.index(world.vocab_size())
    };
    let point = format!("input={x} token={i} context={c}");
    let query = TokenQuery::at(world, x, i, c);
    let w = match op.weights(&query, bounds) {
        Ok(w) => w,
        Err(e) => return report.error(e, &point),
    };
    report.check_weights(&w, bounds, &point);
    if query.safety_token {
        if let Some(scores) = &query.safety_scores {
            report.check_safety(&w, scores, &point);
        }
    }
    let eps_target = sampler.uniform_range(0.0, MAX_PERTURBATION);
    let (moved_dists, eps) = perturb_all(query.dists, eps_target, sampler);
    let moved_query = TokenQuery { dists: &moved_dists, ..query.clone() };
    match op.weights(&moved_query, bounds) {
        Ok(moved) => report.check_regularity(&w, &moved, eps, &point),
        Err(e) => report.error(e, &point),
    }
}

fn task_sample(
    op: &dyn TaskOperator,
    world: &World,
    bounds: &WeightBounds,
    sampler: &mut Sampler,
    report: &mut ConformanceReport,
) {
    let t = sampler.index(world.tasks.len());
    let point = format!("task={t}");
    let w = match TaskQuery::at(world, t).and_then(|q| op.weights(&q, bounds)) {
        Ok(w) => w,
        Err(e) => return report.error(e, &point),
    };
    report.check_weights(&w, bounds, &point);

    let eps_target = sampler.uniform_range(0.0, MAX_PERTURBATION);
    let mut moved = world.clone();
    let mut eps: f64 = 0.0;
    let inputs: Vec<usize> = world.tasks[t].inputs.iter().map(|&(x, _)| x).collect();
    for &x in &inputs {
        for c in 0..world.contexts.len() {
            let (dists, tv) = perturb_all(world.bank.dists(x, c), eps_target, sampler);
            *moved.bank.dists_mut(x, c) = dists;
            eps = eps.max(tv);
        }
    }
    for row in moved.bank.perf_mut() {
        if let Some(Some(s)) = row.get_mut(t) {
            let shifted = (*s + sampler.uniform_range(-eps_target, eps_target)).clamp(0.0, 1.0);
            eps = eps.max((shifted - *s).abs());
            *s = shifted;
        }
    }
    match TaskQuery::at(&moved, t).and_then(|q| op.weights(&q, bounds)) {
        Ok(mw) => report.check_regularity(&w, &mw, eps, &point),
        Err(e) => report.error(e, &point),
    }
}

fn context_sample(
    op: &dyn ContextOperator,
    world: &World,
    bounds: &WeightBounds,
    sampler: &mut Sampler,
    report: &mut ConformanceReport,
) {
    let c = sampler.index(world.contexts.len());
    let point = format!("context={c}");
    let query = ContextQuery::at(world, c);
    let w = match op.weights(&query, bounds) {
        Ok(w) => w,
        Err(e) => return report.error(e, &point),
    };
    report.check_weights(&w, bounds, &point);
    if query.safety_critical {
        if let Some(scores) = &query.safety_scores {
            report.check_safety(&w, scores, &point);
        }
    }

    let eps_target = sampler.uniform_range(0.0, MAX_PERTURBATION);
    let mut moved = world.clone();
    let mut eps: f64 = 0.0;
    for x in 0..world.inputs.len() {
        let (dists, tv) = perturb_all(world.bank.dists(x, c), eps_target, sampler);
        *moved.bank.dists_mut(x, c) = dists;
        eps = eps.max(tv);
    }
    match op.weights(&ContextQuery::at(&moved, c), bounds) {
        Ok(mw) => report.check_regularity(&w, &mw, eps, &point),
        Err(e) => report.error(e, &point),
    }
}

/// Mixes each distribution with a random one: `(1 - eps) p + eps r`, which
/// moves it by at most `eps` in total variation. Returns the largest actual
/// move.
pub(crate) fn perturb_all(
    dists: &[TokenDistribution],
    eps: f64,
    sampler: &mut Sampler,
) -> (Vec<TokenDistribution>, f64) {
    let mut worst: f64 = 0.0;
    let moved = dists
        .iter()
        .map(|d| {
            let noise: Vec<f64> = (0..d.len()).map(|_| -(1.0 - sampler.uniform()).ln()).collect();
            let total: f64 = noise.iter().sum();
            let probs: Vec<f64> =
                d.probs().iter().zip(&noise).map(|(p, r)| (1.0 - eps) * p + eps * r / total).collect();
            worst = worst.max(crate::domain::total_variation(d.probs(), &probs));
            TokenDistribution::from_raw_unchecked(probs)
        })
        .collect();
    (moved, worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SyntheticWorld;
    use crate::error::Result;
    use crate::operators::{ContextRule, FamilyParams, TaskRule, TokenRule};

    struct Inflated;

    impl TokenOperator for Inflated {
        fn family(&self) -> Family {
            Family::Custom
        }
        fn weights(&self, _: &TokenQuery<'_>, _: &WeightBounds) -> Result<WeightVector> {
            Ok(WeightVector(vec![0.7, 0.7]))
        }
    }

    fn two_teacher_world() -> World {
        let mut spec = SyntheticWorld::toy(11);
        spec.teachers = 2;
        spec.generate().unwrap()
    }

    #[test]
    fn uniform_passes_everything() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let bounds = WeightBounds::new(0.1, 0.6, 1.0).unwrap();
        let mut s = Sampler::new(1);
        let tok = TokenRule::new(Family::Uniform, FamilyParams::default()).unwrap();
        let task = TaskRule::new(Family::Uniform, FamilyParams::default()).unwrap();
        let ctx = ContextRule::new(Family::Uniform, FamilyParams::default()).unwrap();
        for op in [OperatorRef::Token(&tok), OperatorRef::Task(&task), OperatorRef::Context(&ctx)] {
            let r = check_conformance(op, &world, &bounds, &mut s, 200);
            assert!(r.all_passed(), "{r:?}");
            assert_eq!(r.estimated_lipschitz, 0.0);
        }
    }

    #[test]
    fn unnormalized_operator_fails_normalization() {
        let world = two_teacher_world();
        let bounds = WeightBounds::new(0.2, 0.8, 1.0).unwrap();
        let r = check_conformance(OperatorRef::Token(&Inflated), &world, &bounds, &mut Sampler::new(0), 50);
        assert!(!r.normalization.passed);
        assert!((r.normalization.worst_violation - 0.4).abs() < 1e-12);
        assert!(r.positivity.passed && r.bounds.passed);
        assert!(!r.all_passed());
    }

    #[test]
    fn disabling_safety_adjustment_breaks_monotonicity() {
        // teacher 0 is the safest but also the least confident everywhere
        let world = crate::test_support::confident_unsafe_world();
        let bounds = WeightBounds::new(0.05, 0.9, 10.0).unwrap();
        let rule = TokenRule::new(Family::FamilyA, FamilyParams::default()).unwrap();
        let broken = rule.without_safety_adjustment();
        let r = check_conformance(OperatorRef::Token(&broken), &world, &bounds, &mut Sampler::new(2), 200);
        let safety = r.safety_monotonicity.as_ref().unwrap();
        assert!(!safety.passed);
        assert!(safety.worst_violation > 0.1);
        let fixed = check_conformance(OperatorRef::Token(&rule), &world, &bounds, &mut Sampler::new(2), 200);
        assert!(fixed.all_passed(), "{fixed:?}");
    }

    #[test]
    fn tight_lipschitz_declaration_fails_regularity() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let bounds = WeightBounds::new(0.05, 0.9, 1e-3).unwrap();
        let rule = TokenRule::new(Family::FamilyA, FamilyParams::default()).unwrap();
        let r = check_conformance(OperatorRef::Token(&rule), &world, &bounds, &mut Sampler::new(0), 100);
        assert!(!r.regularity.passed);
        assert!(r.estimated_lipschitz > 1e-3);
    }

    #[test]
    fn merged_reports_add_samples() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let bounds = WeightBounds::new(0.05, 0.9, 10.0).unwrap();
        let rule = TaskRule::new(Family::FamilyC, FamilyParams::default()).unwrap();
        let mut a = check_conformance(OperatorRef::Task(&rule), &world, &bounds, &mut Sampler::new(0), 30);
        let b = check_conformance(OperatorRef::Task(&rule), &world, &bounds, &mut Sampler::new(1), 20);
        a.merge(&b);
        assert_eq!(a.samples, 50);
        assert_eq!(a.normalization.samples, 50);
        assert!(a.all_passed());
        assert!(a.safety_monotonicity.is_none());
    }

    #[test]
    fn perturbation_stays_within_budget() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let mut s = Sampler::new(9);
        let (moved, tv) = perturb_all(world.bank.dists(0, 0), 0.01, &mut s);
        assert!(tv <= 0.01 && tv > 0.0);
        for d in &moved {
            crate::domain::validate_distribution(d.probs()).unwrap();
        }
    }
}
