//! Product-then-normalize composition of the three scale operators and the
//! weighted ensemble that turns unified weights into target distributions.

use crate::domain::{TokenDistribution, WeightBounds, WeightVector, World};
use crate::error::{Error, Result};
use crate::operators::{
    ContextOperator, ContextQuery, ContextRule, Family, FamilyParams, TaskOperator, TaskQuery, TaskRule, TokenOperator,
    TokenQuery, TokenRule,
};

pub struct UnifiedWeightOperator {
    pub token: Box<dyn TokenOperator>,
    pub task: Box<dyn TaskOperator>,
    pub context: Box<dyn ContextOperator>,
    pub bounds: WeightBounds,
}

impl std::fmt::Debug for UnifiedWeightOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnifiedWeightOperator")
            .field("token", &self.token.family())
            .field("task", &self.task.family())
            .field("context", &self.context.family())
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// Per-scale logarithms for one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDecomposition {
    pub token: Vec<f64>,
    pub task: Vec<f64>,
    pub context: Vec<f64>,
    /// Logarithm of the unnormalized product.
    pub unified: Vec<f64>,
}

/// Unified weights for every token of one `(task, input, context)` cell.
/// Tokens sharing a weight vector share a group.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub groups: Vec<WeightVector>,
    pub token_group: Vec<usize>,
}

impl CellWeights {
    pub fn for_token(&self, token: usize) -> &WeightVector {
        &self.groups[self.token_group[token]]
    }

    /// Applies `f` to every distinct weight vector.
    pub fn map(&self, mut f: impl FnMut(&WeightVector) -> Result<WeightVector>) -> Result<Self> {
        Ok(Self {
            groups: self.groups.iter().map(&mut f).collect::<Result<_>>()?,
            token_group: self.token_group.clone(),
        })
    }
}

impl UnifiedWeightOperator {
    pub fn new(
        token: Box<dyn TokenOperator>,
        task: Box<dyn TaskOperator>,
        context: Box<dyn ContextOperator>,
        bounds: WeightBounds,
    ) -> Self {
        Self { token, task, context, bounds }
    }

    pub fn from_families(
        token: Family,
        task: Family,
        context: Family,
        params: FamilyParams,
        bounds: WeightBounds,
    ) -> Result<Self> {
        bounds.validate()?;
        Ok(Self::new(
            Box::new(TokenRule::new(token, params)?),
            Box::new(TaskRule::new(task, params)?),
            Box::new(ContextRule::new(context, params)?),
            bounds,
        ))
    }

    /// The same built-in family at every scale.
    pub fn same_family(family: Family, params: FamilyParams, bounds: WeightBounds) -> Result<Self> {
        Self::from_families(family, family, family, params, bounds)
    }

    pub fn uniform(bounds: WeightBounds) -> Result<Self> {
        Self::same_family(Family::Uniform, FamilyParams::default(), bounds)
    }

    pub fn families(&self) -> [Family; 3] {
        [self.token.family(), self.task.family(), self.context.family()]
    }

    pub fn is_uniform(&self) -> bool {
        self.families().iter().all(|f| *f == Family::Uniform)
    }

    /// Range the unified weights are guaranteed to lie in when every
    /// component respects the bounds.
    pub fn effective_bounds(&self, k: usize) -> (f64, f64) {
        self.bounds.composed(k, 3)
    }

    fn components(
        &self,
        world: &World,
        input: usize,
        token: usize,
        task: usize,
        context: usize,
    ) -> Result<[WeightVector; 3]> {
        let tok = self.token.weights(&TokenQuery::at(world, input, token, context), &self.bounds)?;
        let tsk = self.task.weights(&TaskQuery::at(world, task)?, &self.bounds)?;
        let ctx = self.context.weights(&ContextQuery::at(world, context), &self.bounds)?;
        Ok([tok, tsk, ctx])
    }

    pub fn unified_weight(
        &self,
        world: &World,
        input: usize,
        token: usize,
        task: usize,
        context: usize,
    ) -> Result<WeightVector> {
        let [tok, tsk, ctx] = self.components(world, input, token, task, context)?;
        normalized_product(&tok, &tsk, &ctx)
    }

    pub fn log_decompose(
        &self,
        world: &World,
        input: usize,
        token: usize,
        task: usize,
        context: usize,
    ) -> Result<LogDecomposition> {
        let [tok, tsk, ctx] = self.components(world, input, token, task, context)?;
        let ln = |w: &WeightVector| w.0.iter().map(|v| v.ln()).collect::<Vec<_>>();
        let unified = (0..tok.len()).map(|k| (tok[k] * tsk[k] * ctx[k]).ln()).collect();
        Ok(LogDecomposition { token: ln(&tok), task: ln(&tsk), context: ln(&ctx), unified })
    }

    /// Unified weights for every token of a cell, evaluating the token
    /// operator once per safety group when it is token-invariant.
    pub fn cell_weights(&self, world: &World, input: usize, task: usize, context: usize) -> Result<CellWeights> {
        let tsk = self.task.weights(&TaskQuery::at(world, task)?, &self.bounds)?;
        let ctx = self.context.weights(&ContextQuery::at(world, context), &self.bounds)?;
        let v = world.vocab_size();
        let representatives: Vec<usize> = if self.token.token_invariant() {
            let mut reps = vec![(0..v).find(|&i| !world.vocab.is_safety_token(i))];
            reps.push(world.vocab.safety_set.first().copied());
            reps.into_iter().flatten().collect()
        } else {
            (0..v).collect()
        };
        let mut groups: Vec<WeightVector> = Vec::new();
        let mut rep_group = Vec::with_capacity(representatives.len());
        for &i in &representatives {
            let tok = self.token.weights(&TokenQuery::at(world, input, i, context), &self.bounds)?;
            let w = normalized_product(&tok, &tsk, &ctx)?;
            match groups.iter().position(|g| *g == w) {
                Some(g) => rep_group.push(g),
                None => {
                    rep_group.push(groups.len());
                    groups.push(w);
                }
            }
        }
        let token_group = (0..v)
            .map(|i| {
                if self.token.token_invariant() {
                    let safety = world.vocab.is_safety_token(i);
                    let slot = representatives
                        .iter()
                        .position(|&r| world.vocab.is_safety_token(r) == safety)
                        .expect("every token has a representative");
                    rep_group[slot]
                } else {
                    rep_group[i]
                }
            })
            .collect();
        Ok(CellWeights { groups, token_group })
    }

    /// Target distribution for one cell.
    pub fn target(&self, world: &World, input: usize, task: usize, context: usize) -> Result<TokenDistribution> {
        let cell = self.cell_weights(world, input, task, context)?;
        mix_target(&cell, world.bank.dists(input, context))
    }
}

/// `w_k = a_k b_k c_k / sum_j a_j b_j c_j`, computed after dividing by the
/// largest product so equal products give exactly `1/K`.
pub fn normalized_product(tok: &WeightVector, task: &WeightVector, ctx: &WeightVector) -> Result<WeightVector> {
    let k = tok.len();
    if task.len() != k || ctx.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: if task.len() != k { task.len() } else { ctx.len() },
        });
    }
    let product: Vec<f64> = (0..k).map(|j| tok[j] * task[j] * ctx[j]).collect();
    let top = product.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::ZeroMass);
    }
    let scaled: Vec<f64> = product.iter().map(|p| p / top).collect();
    let total: f64 = scaled.iter().sum();
    Ok(WeightVector(scaled.iter().map(|s| s / total).collect()))
}

/// Convex combination `q_i = sum_k w_k p_k,i`.
pub fn weighted_ensemble(weights: &WeightVector, dists: &[TokenDistribution]) -> Result<TokenDistribution> {
    if weights.len() != dists.len() {
        return Err(Error::DimensionMismatch { expected: dists.len(), got: weights.len() });
    }
    let v = dists.first().map_or(0, TokenDistribution::len);
    if let Some(d) = dists.iter().find(|d| d.len() != v) {
        return Err(Error::DimensionMismatch { expected: v, got: d.len() });
    }
    let mut q = vec![0.0; v];
    for (i, qi) in q.iter_mut().enumerate() {
        for (w, d) in weights.0.iter().zip(dists) {
            *qi += w * d.probs()[i];
        }
    }
    TokenDistribution::new(q)
}

/// Target for a cell whose weights may differ between token groups. With a
/// single group this is exactly [`weighted_ensemble`]; otherwise the
/// per-token mixtures are renormalized over the vocabulary.
pub fn mix_target(cell: &CellWeights, dists: &[TokenDistribution]) -> Result<TokenDistribution> {
    if cell.groups.len() == 1 {
        return weighted_ensemble(&cell.groups[0], dists);
    }
    let v = cell.token_group.len();
    let mut q = vec![0.0; v];
    for (i, qi) in q.iter_mut().enumerate() {
        for (w, d) in cell.for_token(i).0.iter().zip(dists) {
            *qi += w * d.probs()[i];
        }
    }
    let total: f64 = q.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    TokenDistribution::new(q.iter().map(|x| x / total).collect())
}
