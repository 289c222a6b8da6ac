use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("negative probability mass {value} at index {index}")]
    NegativeMass { index: usize, value: f64 },

    #[error("distribution sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },

    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },

    #[error("infeasible weight bounds: K={k}, w_min={w_min}, w_max={w_max} (need K*w_min <= 1 <= K*w_max)")]
    InfeasibleBounds { k: usize, w_min: f64, w_max: f64 },

    #[error("raw weights carry no positive mass")]
    ZeroMass,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("missing {what} score for teacher {teacher}")]
    MissingScores { what: &'static str, teacher: usize },

    #[error("student has no logits for input index {0}")]
    MissingLogits(usize),

    #[error("missing ground-truth label for input {input}, context {context}")]
    MissingLabel { input: usize, context: usize },

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("trace has {points} usable points, need at least {needed}")]
    InsufficientTrace { points: usize, needed: usize },

    #[error("perturbation {delta} violates the weight margin: weight {weight} outside [{lo}, {hi}]")]
    MarginViolated { delta: f64, weight: f64, lo: f64, hi: f64 },

    #[error("Lagrange multiplier must be nonnegative, got {0}")]
    NegativeMultiplier(f64),

    #[error("safety threshold {s_min} exceeds the maximum achievable safety {max_safety}")]
    Infeasible { s_min: f64, max_safety: f64 },

    #[error("dual ascent did not settle within {iters} iterations")]
    DualStall { iters: usize },

    #[error("operator violates {axiom}: {detail}")]
    NonConformantOperator { axiom: String, detail: String },

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),

    #[error("{} config issue(s): {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Config(Vec<ConfigIssue>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

/// One problem found while validating an experiment config.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigIssue {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),

    #[error("infeasible bounds: K={k}, w_min={w_min}, w_max={w_max} (K*w_min = {}, K*w_max = {})", *k as f64 * w_min, *k as f64 * w_max)]
    InfeasibleBounds { k: usize, w_min: f64, w_max: f64 },

    #[error("{0}")]
    Invalid(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
