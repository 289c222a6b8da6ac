//! Weight dynamics: the fixed-point update map, perturbation robustness of
//! the distilled solution, and gradient variance under adaptive weights.

pub mod fixed_point;
pub mod perturbation;
pub mod variance;

pub use fixed_point::{
    constant_target_world, estimate_contraction, feedback, iterate_to_fixed_point, random_feasible, weight_update_t,
    ContractionEstimate, FixedPointTrace, WeightUpdateConfig,
};
pub use perturbation::{perturbation_experiment, random_direction, PerturbationReport, PerturbationRow};
pub use variance::{gradient_variance_ratio, VarianceReport};
