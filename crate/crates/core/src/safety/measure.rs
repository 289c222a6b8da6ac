//! The linear safety measure and its expectation under the world measure.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::{softmax, Sampler, StudentParams, VocabularySpec, World};
use crate::error::{Error, Result};

/// Threshold, ground-truth labels and dual-ascent settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyConfig {
    pub s_min: f64,
    /// `(input index, context index) -> y*`
    pub labels: BTreeMap<(usize, usize), usize>,
    pub dual_step: f64,
    pub max_dual_iters: usize,
}

impl SafetyConfig {
    pub const DEFAULT_DUAL_STEP: f64 = 0.5;
    pub const DEFAULT_MAX_DUAL_ITERS: usize = 200;

    pub fn new(s_min: f64, labels: BTreeMap<(usize, usize), usize>) -> Result<Self> {
        let config =
            Self { s_min, labels, dual_step: Self::DEFAULT_DUAL_STEP, max_dual_iters: Self::DEFAULT_MAX_DUAL_ITERS };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_min > 0.0 && self.s_min <= 1.0) {
            return Err(Error::InvalidParameter(format!("S_min must lie in (0, 1], got {}", self.s_min)));
        }
        if !(self.dual_step > 0.0) || self.max_dual_iters == 0 {
            return Err(Error::InvalidParameter("dual step and iteration cap must be positive".into()));
        }
        Ok(())
    }

    /// Labels drawn from the safety set on safety-critical contexts and from
    /// the whole vocabulary elsewhere.
    pub fn synthetic_labels(world: &World, seed: u64) -> BTreeMap<(usize, usize), usize> {
        let mut sampler = Sampler::new(seed);
        let safety = &world.vocab.safety_set;
        let mut labels = BTreeMap::new();
        for x in 0..world.inputs.len() {
            for (c, ctx) in world.contexts.iter().enumerate() {
                let y = if ctx.safety_critical && !safety.is_empty() {
                    safety[sampler.index(safety.len())]
                } else {
                    sampler.index(world.vocab_size())
                };
                labels.insert((x, c), y);
            }
        }
        labels
    }
}

/// `p(y*)` when `y*` is a safety token, else 1.
pub fn safety_measure(p: &[f64], y_star: usize, vocab: &VocabularySpec) -> f64 {
    if vocab.is_safety_token(y_star) {
        p[y_star]
    } else {
        1.0
    }
}

/// Which contexts enter the expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SafetyScope {
    All,
    SafetyCritical,
}

/// One safety-token term `weight * p_x(token)` of the expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SafetyTerm {
    pub input: usize,
    pub context: usize,
    pub token: usize,
    pub weight: f64,
}

/// `Safety(theta) = constant + sum_terms weight * p_x(token)`, normalized
/// over the in-scope (input, context) mass.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SafetyForm {
    pub constant: f64,
    pub terms: Vec<SafetyTerm>,
    pub n_inputs: usize,
    pub vocab: usize,
}

impl SafetyForm {
    pub fn build(world: &World, safety: &SafetyConfig, scope: SafetyScope) -> Result<Self> {
        let n_ctx = world.contexts.len();
        let mut mass = vec![0.0; world.inputs.len() * n_ctx];
        for point in world.joint() {
            if scope == SafetyScope::All || world.contexts[point.context].safety_critical {
                mass[point.input * n_ctx + point.context] += point.prob;
            }
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidWorld("no probability mass in the safety scope".into()));
        }
        let mut terms = Vec::new();
        for (i, &m) in mass.iter().enumerate() {
            if m <= 0.0 {
                continue;
            }
            let (input, context) = (i / n_ctx, i % n_ctx);
            let &token = safety.labels.get(&(input, context)).ok_or(Error::MissingLabel { input, context })?;
            if token >= world.vocab_size() {
                return Err(Error::InvalidParameter(format!("label {token} outside the vocabulary")));
            }
            let weight = m / total;
            if world.vocab.is_safety_token(token) {
                terms.push(SafetyTerm { input, context, token, weight });
            }
        }
        // exactly 1 when no label is a safety token
        let constant = 1.0 - terms.iter().map(|t| t.weight).sum::<f64>();
        Ok(Self { constant, terms, n_inputs: world.inputs.len(), vocab: world.vocab_size() })
    }

    pub fn value(&self, theta: &StudentParams) -> Result<f64> {
        theta.check_shape(self.n_inputs, self.vocab)?;
        let probs: Vec<Vec<f64>> = theta.logits.iter().map(|r| softmax(r)).collect();
        Ok(self.value_at(|x, y| probs[x][y]))
    }

    /// Evaluates the form on an arbitrary `(input, context) -> distribution`.
    pub fn value_at(&self, p: impl Fn(usize, usize) -> f64) -> f64 {
        self.constant + self.terms.iter().map(|t| t.weight * p(t.input, t.token)).sum::<f64>()
    }

    /// Row `x`: `sum_terms weight * p_y (e_y - p)`.
    pub fn gradient(&self, theta: &StudentParams) -> Result<Vec<Vec<f64>>> {
        theta.check_shape(self.n_inputs, self.vocab)?;
        let probs: Vec<Vec<f64>> = theta.logits.iter().take(self.n_inputs).map(|r| softmax(r)).collect();
        let mut grad = vec![vec![0.0; self.vocab]; self.n_inputs];
        for t in &self.terms {
            let p = &probs[t.input];
            let scale = t.weight * p[t.token];
            for (j, g) in grad[t.input].iter_mut().enumerate() {
                *g -= scale * p[j];
            }
            grad[t.input][t.token] += scale;
        }
        Ok(grad)
    }

    /// Supremum over all students: each input puts its whole mass on the
    /// token carrying the most term weight.
    pub fn supremum(&self) -> f64 {
        let mut per_token = vec![vec![0.0; self.vocab]; self.n_inputs];
        for t in &self.terms {
            per_token[t.input][t.token] += t.weight;
        }
        self.constant + per_token.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).sum::<f64>()
    }
}

/// Expected safety over every (input, context) pair with positive mass.
pub fn expected_safety(theta: &StudentParams, world: &World, safety: &SafetyConfig) -> Result<f64> {
    expected_safety_in(theta, world, safety, SafetyScope::All)
}

pub fn expected_safety_in(
    theta: &StudentParams,
    world: &World,
    safety: &SafetyConfig,
    scope: SafetyScope,
) -> Result<f64> {
    SafetyForm::build(world, safety, scope)?.value(theta)
}

pub fn expected_safety_gradient(theta: &StudentParams, world: &World, safety: &SafetyConfig) -> Result<Vec<Vec<f64>>> {
    SafetyForm::build(world, safety, SafetyScope::All)?.gradient(theta)
}

/// Supremum of expected safety over students (approached, not attained, when
/// it requires a point mass).
pub fn max_achievable_safety(world: &World, safety: &SafetyConfig) -> Result<f64> {
    Ok(SafetyForm::build(world, safety, SafetyScope::All)?.supremum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SyntheticWorld;
    use crate::test_support::appendix_world;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn labels_all(world: &World, y: usize) -> BTreeMap<(usize, usize), usize> {
        (0..world.inputs.len()).flat_map(|x| (0..world.contexts.len()).map(move |c| ((x, c), y))).collect()
    }

    #[test]
    fn measure_examples() {
        let vocab = VocabularySpec::new(3, vec![0]).unwrap();
        assert_eq!(safety_measure(&[0.2, 0.5, 0.3], 1, &vocab), 1.0);
        assert_eq!(safety_measure(&[1.0, 0.0, 0.0], 0, &vocab), 1.0);
        assert_eq!(safety_measure(&[0.6, 0.25, 0.15], 0, &vocab), 0.6);
        let empty = VocabularySpec::new(3, vec![]).unwrap();
        assert_eq!(safety_measure(&[0.0, 0.5, 0.5], 0, &empty), 1.0);
    }

    #[test]
    fn expectation_examples() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let theta = StudentParams::zeros(8, 10, 0.0);
        // token 5 is not a safety token
        let safe = SafetyConfig::new(0.5, labels_all(&world, 5)).unwrap();
        assert_eq!(expected_safety(&theta, &world, &safe).unwrap(), 1.0);
        let risky = SafetyConfig::new(0.5, labels_all(&world, 0)).unwrap();
        assert_abs_diff_eq!(expected_safety(&theta, &world, &risky).unwrap(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn appendix_ensemble_safety() {
        let world = appendix_world([0.9, 0.2]);
        let w = [0.69, 0.31];
        let q: Vec<f64> = (0..3)
            .map(|i| w[0] * world.bank.dists(0, 0)[0].probs()[i] + w[1] * world.bank.dists(0, 0)[1].probs()[i])
            .collect();
        let theta = StudentParams::from_distributions(&[q], 0.0);
        let safety = SafetyConfig::new(0.5, labels_all(&world, 0)).unwrap();
        assert_abs_diff_eq!(expected_safety(&theta, &world, &safety).unwrap(), 0.676, epsilon = 1e-12);
    }

    #[test]
    fn missing_label_is_reported() {
        let world = appendix_world([0.9, 0.2]);
        let safety = SafetyConfig::new(0.5, BTreeMap::new()).unwrap();
        let theta = StudentParams::zeros(1, 3, 0.0);
        assert_eq!(expected_safety(&theta, &world, &safety), Err(Error::MissingLabel { input: 0, context: 0 }));
    }

    #[test]
    fn supremum_picks_best_token_per_input() {
        let world = SyntheticWorld::toy(0).generate().unwrap();
        let mut labels = labels_all(&world, 0);
        labels.insert((0, 1), 1);
        let safety = SafetyConfig::new(0.5, labels).unwrap();
        // input 0 splits its mass between tokens 0 and 1
        let form = SafetyForm::build(&world, &safety, SafetyScope::All).unwrap();
        let lost = form.terms.iter().find(|t| t.input == 0 && t.context == 1).unwrap().weight;
        assert_abs_diff_eq!(form.supremum(), 1.0 - lost, epsilon = 1e-15);
    }

    #[test]
    fn bad_config_rejected() {
        assert!(SafetyConfig::new(0.0, BTreeMap::new()).is_err());
        assert!(SafetyConfig::new(1.5, BTreeMap::new()).is_err());
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..1000) {
            let world = SyntheticWorld::toy(seed % 5).generate().unwrap();
            let safety = SafetyConfig::new(0.5, SafetyConfig::synthetic_labels(&world, seed)).unwrap();
            let mut s = Sampler::new(seed);
            let mut theta = StudentParams::zeros(8, 10, 0.0);
            for row in &mut theta.logits {
                for z in row.iter_mut() {
                    *z = s.uniform_range(-2.0, 2.0);
                }
            }
            let grad = expected_safety_gradient(&theta, &world, &safety).unwrap();
            let h = 1e-5;
            for (x, i) in [(0, 0), (3, 1), (7, 9), (5, 4)] {
                let mut up = theta.clone();
                up.logits[x][i] += h;
                let mut down = theta.clone();
                down.logits[x][i] -= h;
                let fd = (expected_safety(&up, &world, &safety).unwrap()
                    - expected_safety(&down, &world, &safety).unwrap()) / (2.0 * h);
                prop_assert!((fd - grad[x][i]).abs() <= 1e-6, "{fd} vs {}", grad[x][i]);
            }
        }

        #[test]
        fn measure_in_unit_interval(p in proptest::collection::vec(0.0f64..1.0, 4), y in 0usize..4) {
            let total: f64 = p.iter().sum::<f64>() + 1e-9;
            let p: Vec<f64> = p.iter().map(|v| v / total).collect();
            let vocab = VocabularySpec::new(4, vec![0, 2]).unwrap();
            let s = safety_measure(&p, y, &vocab);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
