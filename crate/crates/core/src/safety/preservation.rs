//! Safety of the converged student against the weighted ensemble it was
//! distilled from, on safety-critical contexts.

use serde::Serialize;

use super::measure::{SafetyConfig, SafetyForm, SafetyScope};
use crate::composition::UnifiedWeightOperator;
use crate::distill::{TargetTable, TrainerConfig};
use crate::domain::{Sampler, World};
use crate::error::{Error, Result};
use crate::operators::conformance::{check_conformance, OperatorRef};

/// Allowed shortfall of student safety below ensemble safety.
pub const PRESERVATION_TOL: f64 = 1e-3;
/// Context samples used to confirm the context operator conforms.
pub const CONFORMANCE_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PreservationReport {
    pub student_safety: f64,
    pub ensemble_safety: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub passed: bool,
}

/// The world with its context measure restricted to safety-critical
/// contexts and renormalized.
pub fn restrict_to_critical(world: &World) -> Result<World> {
    let total: f64 = world.contexts.iter().filter(|c| c.safety_critical).map(|c| c.measure_weight).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWorld("no safety-critical context carries mass".into()));
    }
    let mut restricted = world.clone();
    for ctx in &mut restricted.contexts {
        ctx.measure_weight = if ctx.safety_critical { ctx.measure_weight / total } else { 0.0 };
    }
    Ok(restricted)
}

/// Confirms the context operator of `g` orders safety-critical contexts by
/// safety, trains the unregularized student to convergence on those contexts
/// and compares its expected safety with that of the weighted ensemble.
pub fn jensen_preservation_check(
    g: &UnifiedWeightOperator,
    world: &World,
    safety: &SafetyConfig,
    trainer: &TrainerConfig,
) -> Result<PreservationReport> {
    let mut sampler = Sampler::substream(trainer.seed, 7);
    let report = check_conformance(
        OperatorRef::Context(g.context.as_ref()),
        world,
        &g.bounds,
        &mut sampler,
        CONFORMANCE_SAMPLES,
    );
    if let Some(check) = report.safety_monotonicity.as_ref().filter(|c| !c.passed) {
        return Err(Error::NonConformantOperator {
            axiom: check.axiom.to_string(),
            detail: format!("worst violation {:.3e}", check.worst_violation),
        });
    }

    let critical = restrict_to_critical(world)?;
    let table = TargetTable::build(g, &critical)?;
    let form = SafetyForm::build(&critical, safety, SafetyScope::All)?;
    let solution = table.solve(0.0, 1e-8)?;
    let student_safety = form.value(&solution.params)?;

    // ensemble safety: every (task, input, context) target scored on its own
    let mut ensemble_safety = form.constant;
    for term in &form.terms {
        let cells = table.cells.iter().filter(|c| c.input == term.input && c.context == term.context);
        let (m, s) = cells.fold((0.0, 0.0), |(m, s), c| (m + c.prob, s + c.prob * c.target.probs()[term.token]));
        ensemble_safety += term.weight * s / m;
    }
    Ok(PreservationReport {
        student_safety,
        ensemble_safety,
        grad_norm: solution.grad_norm,
        converged: solution.converged,
        passed: solution.converged && student_safety >= ensemble_safety - PRESERVATION_TOL,
    })
}
