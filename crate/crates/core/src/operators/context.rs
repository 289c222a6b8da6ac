use super::{
    clip_normalize, enforce_safety_order, teacher_statistics, ContextOperator, Family, FamilyParams, ENTROPY_FLOOR,
    VARIANCE_FLOOR,
};
use crate::domain::{WeightBounds, WeightVector, World};
use crate::error::{Error, Result};

/// Per-teacher context indicators, averaged over inputs with their marginal
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextQuery {
    pub safety_critical: bool,
    pub safety_scores: Option<Vec<f64>>,
    pub mean_entropy: Vec<f64>,
    pub disagreement: Vec<f64>,
}

impl ContextQuery {
    pub fn at(world: &World, context: usize) -> Self {
        let marginal = world.input_marginal();
        let cells = marginal.iter().enumerate().map(|(x, &w)| (x, context, w));
        let (mean_entropy, disagreement) = teacher_statistics(world, cells);
        Self {
            safety_critical: world.contexts[context].safety_critical,
            safety_scores: world.bank.safety_scores().ok(),
            mean_entropy,
            disagreement,
        }
    }

    fn scores(&self) -> Result<&[f64]> {
        self.safety_scores.as_deref().ok_or(Error::MissingScores { what: "safety", teacher: 0 })
    }
}

/// Built-in context-scale family.
///
/// * `family_a`: ordinal safety weighting, `safety + 1e-6` on safety-critical
///   contexts and uniform elsewhere
/// * `family_b`: context-specific confidence, `exp(-alpha * mean entropy)`
/// * `family_c`: closeness to the consensus, `exp(-disagreement / tau)`
/// * `inverse_entropy`: inverse mean entropy in the context
///
/// Families other than `uniform` and `family_a` apply the safety ordering on
/// safety-critical contexts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextRule {
    pub family: Family,
    pub params: FamilyParams,
}

impl ContextRule {
    pub fn new(family: Family, params: FamilyParams) -> Result<Self> {
        if family == Family::Custom {
            return Err(Error::InvalidParameter("custom is not a built-in family".into()));
        }
        params.validate()?;
        Ok(Self { family, params })
    }
}

impl ContextOperator for ContextRule {
    fn family(&self) -> Family {
        self.family
    }

    fn weights(&self, query: &ContextQuery, bounds: &WeightBounds) -> Result<WeightVector> {
        let k = query.mean_entropy.len();
        let p = &self.params;
        let mut raw: Vec<f64> = match self.family {
            Family::Uniform => {
                bounds.check_feasible(k)?;
                return Ok(WeightVector::uniform(k));
            }
            Family::FamilyA => {
                if query.safety_critical {
                    query.scores()?.iter().map(|s| s + VARIANCE_FLOOR).collect()
                } else {
                    vec![1.0; k]
                }
            }
            Family::InverseEntropy => query.mean_entropy.iter().map(|h| 1.0 / h.max(ENTROPY_FLOOR)).collect(),
            Family::FamilyB => query.mean_entropy.iter().map(|h| (-p.alpha * h).exp()).collect(),
            Family::FamilyC => query.disagreement.iter().map(|d| (-d / p.tau).exp()).collect(),
            Family::Custom => unreachable!(),
        };
        if query.safety_critical && self.family != Family::FamilyA {
            enforce_safety_order(&mut raw, query.scores()?);
        }
        clip_normalize(&raw, bounds)
    }
}

pub fn context_weights_safety(world: &World, context: usize, bounds: &WeightBounds) -> Result<WeightVector> {
    let query = ContextQuery::at(world, context);
    query.scores()?;
    ContextRule::new(Family::FamilyA, FamilyParams::default())?.weights(&query, bounds)
}
