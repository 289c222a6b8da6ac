//! Teacher-weighting operators at token, task and context scale, and the
//! sampling-based axiom checker.
//!
//! Every built-in operator produces raw positive scores from per-teacher
//! statistics and passes them through [`clip_normalize`]. On safety-critical
//! tokens and contexts the scores are additionally ordered by teacher safety
//! (see [`enforce_safety_order`]).

pub mod conformance;
mod context;
pub mod pareto;
mod projection;
mod task;
mod token;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{TokenDistribution, WeightBounds, WeightVector, World};
use crate::error::{Error, Result};

pub use conformance::{check_conformance, AxiomCheck, ConformanceReport, OperatorRef, Scale};
pub use context::{context_weights_safety, ContextQuery, ContextRule};
pub use pareto::{check_pareto_compat, ParetoCompatReport, QuadraticLoss};
pub use projection::clip_normalize;
pub use task::{task_weights_performance, TaskQuery, TaskRule};
pub use token::{
    inverse_entropy_weights, token_weights_family_a, token_weights_family_b, token_weights_inverse_entropy, TokenQuery,
    TokenRule,
};

/// Floor on entropies before inversion.
pub const ENTROPY_FLOOR: f64 = 1e-6;
/// Additive guard on variances and safety scores.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Uniform,
    InverseEntropy,
    FamilyA,
    FamilyB,
    FamilyC,
    Custom,
}

impl Family {
    pub const BUILTIN: [Family; 5] =
        [Family::Uniform, Family::InverseEntropy, Family::FamilyA, Family::FamilyB, Family::FamilyC];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::InverseEntropy => "inverse_entropy",
            Family::FamilyA => "family_a",
            Family::FamilyB => "family_b",
            Family::FamilyC => "family_c",
            Family::Custom => "custom",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::BUILTIN
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown operator family '{s}'")))
    }
}

/// Tunable constants of the built-in families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyParams {
    /// Entropy decay rate of the exponential families.
    pub alpha: f64,
    /// Softmax temperature of score-based families.
    pub tau: f64,
    /// Offset added to task loss `1 - perf` before inversion.
    pub loss_offset: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self { alpha: 1.0, tau: 0.5, loss_offset: 0.1 }
    }
}

impl FamilyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.tau > 0.0 && self.loss_offset > 0.0) {
            return Err(Error::InvalidParameter(format!("need alpha >= 0, tau > 0, loss_offset > 0; got {self:?}")));
        }
        Ok(())
    }
}

pub trait TokenOperator: Send + Sync {
    fn family(&self) -> Family;
    fn weights(&self, query: &TokenQuery<'_>, bounds: &WeightBounds) -> Result<WeightVector>;

    /// True when the weights depend on the token only through its membership
    /// in the safety set, which lets callers evaluate once per group.
    fn token_invariant(&self) -> bool {
        false
    }
}

pub trait TaskOperator: Send + Sync {
    fn family(&self) -> Family;
    fn weights(&self, query: &TaskQuery, bounds: &WeightBounds) -> Result<WeightVector>;
}

pub trait ContextOperator: Send + Sync {
    fn family(&self) -> Family;
    fn weights(&self, query: &ContextQuery, bounds: &WeightBounds) -> Result<WeightVector>;
}

/// Multiplies each raw score by `1 + safety` and then lifts every teacher to
/// at least the score of any teacher it is at least as safe as. The result is
/// ordered consistently with `safety`, equal on ties, and unchanged wherever
/// the multiplicative adjustment already respects the order.
pub fn enforce_safety_order(raw: &mut [f64], safety: &[f64]) {
    for (r, s) in raw.iter_mut().zip(safety) {
        *r *= 1.0 + s;
    }
    let adjusted = raw.to_vec();
    for (k, r) in raw.iter_mut().enumerate() {
        *r = adjusted
            .iter()
            .zip(safety)
            .filter(|(_, &s)| s <= safety[k])
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
    }
}

/// Per-teacher averages of entropy and of total-variation distance to the
/// uniform teacher mixture, under a weighting of `(input, context)` cells.
pub(crate) fn teacher_statistics(
    world: &World,
    cells: impl Iterator<Item = (usize, usize, f64)>,
) -> (Vec<f64>, Vec<f64>) {
    let k = world.k();
    let mut entropy = vec![0.0; k];
    let mut disagreement = vec![0.0; k];
    let mut mass = 0.0;
    for (x, c, w) in cells {
        if w <= 0.0 {
            continue;
        }
        let dists = world.bank.dists(x, c);
        let mean = mixture(dists);
        for (j, d) in dists.iter().enumerate() {
            entropy[j] += w * d.entropy();
            disagreement[j] += w * crate::domain::total_variation(d.probs(), &mean);
        }
        mass += w;
    }
    if mass > 0.0 {
        for v in entropy.iter_mut().chain(disagreement.iter_mut()) {
            *v /= mass;
        }
    }
    (entropy, disagreement)
}

fn mixture(dists: &[TokenDistribution]) -> Vec<f64> {
    let v = dists[0].len();
    let mut mean = vec![0.0; v];
    for d in dists {
        for (m, p) in mean.iter_mut().zip(d.probs()) {
            *m += p / dists.len() as f64;
        }
    }
    mean
}
