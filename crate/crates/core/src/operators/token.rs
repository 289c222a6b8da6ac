use super::{clip_normalize, enforce_safety_order, Family, FamilyParams, TokenOperator, ENTROPY_FLOOR, VARIANCE_FLOOR};
use crate::domain::{TokenDistribution, WeightBounds, WeightVector, World};
use crate::error::{Error, Result};

/// Everything a token-scale operator may look at for one `(x, i, c)`.
#[derive(Debug, Clone)]
pub struct TokenQuery<'a> {
    pub dists: &'a [TokenDistribution],
    pub token: usize,
    pub safety_token: bool,
    /// `None` when the world declares no safety scores.
    pub safety_scores: Option<Vec<f64>>,
}

impl<'a> TokenQuery<'a> {
    pub fn at(world: &'a World, input: usize, token: usize, context: usize) -> Self {
        Self {
            dists: world.bank.dists(input, context),
            token,
            safety_token: world.vocab.is_safety_token(token),
            safety_scores: world.bank.safety_scores().ok(),
        }
    }

    fn scores(&self) -> Result<&[f64]> {
        self.safety_scores.as_deref().ok_or(Error::MissingScores { what: "safety", teacher: 0 })
    }
}

/// Built-in token-scale family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenRule {
    pub family: Family,
    pub params: FamilyParams,
    /// Apply the safety ordering on safety tokens. Only disabled to build
    /// deliberately non-conforming operators.
    pub safety_adjustment: bool,
}

impl TokenRule {
    pub fn new(family: Family, params: FamilyParams) -> Result<Self> {
        if family == Family::Custom {
            return Err(Error::InvalidParameter("custom is not a built-in family".into()));
        }
        params.validate()?;
        Ok(Self { family, params, safety_adjustment: true })
    }

    pub fn without_safety_adjustment(mut self) -> Self {
        self.safety_adjustment = false;
        self
    }

    fn raw(&self, query: &TokenQuery<'_>) -> Result<Vec<f64>> {
        let dists = query.dists;
        Ok(match self.family {
            Family::InverseEntropy => dists.iter().map(|d| 1.0 / d.entropy().max(ENTROPY_FLOOR)).collect(),
            Family::FamilyA => dists.iter().map(|d| (-self.params.alpha * d.entropy()).exp()).collect(),
            Family::FamilyB => dists.iter().map(|d| 1.0 / (d.entry_variance() + VARIANCE_FLOOR)).collect(),
            Family::FamilyC => dists
                .iter()
                .zip(query.scores()?)
                .map(|(d, s)| (-self.params.alpha * d.entropy()).exp() * (1.0 + s))
                .collect(),
            Family::Uniform | Family::Custom => unreachable!("handled by caller"),
        })
    }
}

impl TokenOperator for TokenRule {
    fn family(&self) -> Family {
        self.family
    }

    fn token_invariant(&self) -> bool {
        true
    }

    fn weights(&self, query: &TokenQuery<'_>, bounds: &WeightBounds) -> Result<WeightVector> {
        let k = query.dists.len();
        if self.family == Family::Uniform {
            bounds.check_feasible(k)?;
            return Ok(WeightVector::uniform(k));
        }
        let mut raw = self.raw(query)?;
        if query.safety_token && self.safety_adjustment {
            enforce_safety_order(&mut raw, query.scores()?);
        }
        clip_normalize(&raw, bounds)
    }
}

/// Inverse-entropy weights from entropies supplied directly (any log base).
pub fn inverse_entropy_weights(entropies: &[f64], bounds: &WeightBounds) -> Result<WeightVector> {
    let raw: Vec<f64> = entropies.iter().map(|h| 1.0 / h.max(ENTROPY_FLOOR)).collect();
    clip_normalize(&raw, bounds)
}

pub fn token_weights_inverse_entropy(
    world: &World,
    input: usize,
    token: usize,
    context: usize,
    bounds: &WeightBounds,
) -> Result<WeightVector> {
    TokenRule::new(Family::InverseEntropy, FamilyParams::default())?
        .weights(&TokenQuery::at(world, input, token, context), bounds)
}

pub fn token_weights_family_a(
    world: &World,
    input: usize,
    token: usize,
    context: usize,
    bounds: &WeightBounds,
    alpha: f64,
) -> Result<WeightVector> {
    let params = FamilyParams { alpha, ..FamilyParams::default() };
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    TokenRule::new(Family::FamilyA, params)?.weights(&TokenQuery::at(world, input, token, context), bounds)
}

pub fn token_weights_family_b(
    world: &World,
    input: usize,
    token: usize,
    context: usize,
    bounds: &WeightBounds,
) -> Result<WeightVector> {
    TokenRule::new(Family::FamilyB, FamilyParams::default())?
        .weights(&TokenQuery::at(world, input, token, context), bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn td(p: &[f64]) -> TokenDistribution {
        TokenDistribution::new(p.to_vec()).unwrap()
    }

    fn bounds(lo: f64, hi: f64) -> WeightBounds {
        WeightBounds::new(lo, hi, 10.0).unwrap()
    }

    fn appendix_pair() -> Vec<TokenDistribution> {
        vec![td(&[0.8, 0.15, 0.05]), td(&[0.4, 0.35, 0.25])]
    }

    fn query(dists: &[TokenDistribution], safety_token: bool, scores: Vec<f64>) -> TokenQuery<'_> {
        TokenQuery { dists, token: 0, safety_token, safety_scores: Some(scores) }
    }

    #[test]
    fn inverse_entropy_with_given_entropies() {
        let w = inverse_entropy_weights(&[0.68, 1.52], &bounds(0.1, 0.9)).unwrap();
        // (1/0.68) / (1/0.68 + 1/1.52) = 1.52 / 2.20
        assert_abs_diff_eq!(w[0], 1.52 / 2.2, epsilon = 1e-12);
        assert_abs_diff_eq!(w[0], 0.691, epsilon = 5e-4);
        assert_abs_diff_eq!(w[1], 0.309, epsilon = 5e-4);
    }

    #[test]
    fn inverse_entropy_recomputed_nats() {
        let dists = appendix_pair();
        let rule = TokenRule::new(Family::InverseEntropy, FamilyParams::default()).unwrap();
        let w = rule.weights(&query(&dists, false, vec![0.5, 0.5]), &bounds(0.1, 0.9)).unwrap();
        // 1.0805276 / (0.6128695 + 1.0805276)
        assert_abs_diff_eq!(w[0], 0.638_083, epsilon = 1e-5);
        assert_abs_diff_eq!(w[1], 0.361_917, epsilon = 1e-5);
    }

    #[test]
    fn inverse_entropy_is_log_base_invariant() {
        let nats = [0.612_869_5, 1.080_527_6, 0.3];
        let bits: Vec<f64> = nats.iter().map(|h| h / 2f64.ln()).collect();
        let b = bounds(0.05, 0.9);
        let a = inverse_entropy_weights(&nats, &b).unwrap();
        let c = inverse_entropy_weights(&bits, &b).unwrap();
        assert!(a.max_abs_diff(&c) <= 1e-12);
    }

    #[test]
    fn identical_teachers_get_equal_weight() {
        let d = td(&[0.7, 0.2, 0.1]);
        let dists = vec![d.clone(), d];
        for family in Family::BUILTIN {
            let rule = TokenRule::new(family, FamilyParams::default()).unwrap();
            let w = rule.weights(&query(&dists, false, vec![0.4, 0.4]), &bounds(0.1, 0.9)).unwrap();
            assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn family_a_exponential_decay() {
        let dists = appendix_pair();
        let rule = TokenRule::new(Family::FamilyA, FamilyParams::default()).unwrap();
        let w = rule.weights(&query(&dists, false, vec![0.5, 0.5]), &bounds(0.01, 0.99)).unwrap();
        // e^-0.61287 = 0.54180, e^-1.08053 = 0.33942
        assert_abs_diff_eq!(w[0], 0.6148, epsilon = 1e-4);
        assert_abs_diff_eq!(w[1], 0.3852, epsilon = 1e-4);
    }

    #[test]
    fn family_a_small_alpha_is_uniform() {
        let dists = appendix_pair();
        let params = FamilyParams { alpha: 1e-9, ..FamilyParams::default() };
        let rule = TokenRule::new(Family::FamilyA, params).unwrap();
        let w = rule.weights(&query(&dists, false, vec![0.5, 0.5]), &bounds(0.01, 0.99)).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn family_a_prefers_safer_teacher_on_safety_tokens() {
        let d = td(&[0.5, 0.3, 0.2]);
        let dists = vec![d.clone(), d];
        let rule = TokenRule::new(Family::FamilyA, FamilyParams::default()).unwrap();
        let w = rule.weights(&query(&dists, true, vec![0.9, 0.1]), &bounds(0.01, 0.99)).unwrap();
        assert!(w[0] > w[1]);
        // 1.9 / (1.9 + 1.1)
        assert_abs_diff_eq!(w[0], 1.9 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn family_b_inverse_variance() {
        let dists = appendix_pair();
        let rule = TokenRule::new(Family::FamilyB, FamilyParams::default()).unwrap();
        let w = rule.weights(&query(&dists, false, vec![0.5, 0.5]), &bounds(0.01, 0.99)).unwrap();
        // raw = 1/(0.110556 + 1e-6), 1/(0.003889 + 1e-6) = (9.0450, 257.07)
        let r1 = 1.0 / (0.995 / 9.0 + 1e-6);
        let r2 = 1.0 / (0.035 / 9.0 + 1e-6);
        assert_abs_diff_eq!(w[0], r1 / (r1 + r2), epsilon = 1e-12);
        assert_abs_diff_eq!(w[0], 0.0340, epsilon = 1e-3);

        let capped = rule.weights(&query(&dists, false, vec![0.5, 0.5]), &bounds(0.2, 0.8)).unwrap();
        assert_abs_diff_eq!(capped[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(capped[1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn families_a_and_b_disagree_on_appendix_pair() {
        let dists = appendix_pair();
        let q = query(&dists, false, vec![0.5, 0.5]);
        let b = bounds(0.01, 0.99);
        let a = TokenRule::new(Family::FamilyA, FamilyParams::default()).unwrap().weights(&q, &b).unwrap();
        let v = TokenRule::new(Family::FamilyB, FamilyParams::default()).unwrap().weights(&q, &b).unwrap();
        assert!(a.max_abs_diff(&v) > 0.1);
    }

    #[test]
    fn point_mass_teacher_uses_entropy_floor() {
        let dists = vec![TokenDistribution::point_mass(3, 0), td(&[0.4, 0.35, 0.25])];
        let rule = TokenRule::new(Family::InverseEntropy, FamilyParams::default()).unwrap();
        let w = rule.weights(&query(&dists, false, vec![0.5, 0.5]), &bounds(0.2, 0.8)).unwrap();
        assert_abs_diff_eq!(w[0], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn missing_safety_scores_on_safety_token() {
        let dists = appendix_pair();
        let q = TokenQuery { dists: &dists, token: 0, safety_token: true, safety_scores: None };
        let rule = TokenRule::new(Family::FamilyA, FamilyParams::default()).unwrap();
        assert!(matches!(rule.weights(&q, &bounds(0.1, 0.9)), Err(Error::MissingScores { .. })));
    }
}
