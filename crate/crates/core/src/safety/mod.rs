//! Safety measure, safety-constrained distillation and safety preservation.

pub mod constrained;
pub mod measure;
pub mod preservation;

pub use constrained::{
    dual_ascent_solve, kkt_residuals, lagrangian_value, pareto_sweep, sweep_is_monotone, write_pareto_csv,
    DualSolution, DualStep, KktResiduals, ParetoPoint, SafetyProblem,
};
pub use measure::{
    expected_safety, expected_safety_gradient, expected_safety_in, max_achievable_safety, safety_measure, SafetyConfig,
    SafetyScope,
};
pub use preservation::{jensen_preservation_check, restrict_to_critical, PreservationReport};
