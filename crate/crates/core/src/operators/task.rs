use super::{clip_normalize, teacher_statistics, Family, FamilyParams, TaskOperator, ENTROPY_FLOOR};
use crate::domain::{WeightBounds, WeightVector, World};
use crate::error::{Error, Result};

/// Per-teacher task indicators. Entropy and disagreement are averaged over
/// the task's data distribution and the context measure.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskQuery {
    pub perf: Vec<f64>,
    pub mean_entropy: Vec<f64>,
    pub disagreement: Vec<f64>,
}

impl TaskQuery {
    pub fn at(world: &World, task: usize) -> Result<Self> {
        let perf = world.bank.perf_scores(task)?;
        let spec = &world.tasks[task];
        let cells = spec
            .inputs
            .iter()
            .flat_map(|&(x, w)| world.contexts.iter().enumerate().map(move |(c, ctx)| (x, c, w * ctx.measure_weight)));
        let (mean_entropy, disagreement) = teacher_statistics(world, cells);
        Ok(Self { perf, mean_entropy, disagreement })
    }
}

/// Built-in task-scale family.
///
/// * `inverse_entropy`: inverse mean entropy on the task's data
/// * `family_a`: inverse task loss `1 / (1 - perf + loss_offset)`
/// * `family_b`: agreement with the teacher consensus, `exp(-disagreement / tau)`
/// * `family_c`: performance softmax, `exp(perf / tau)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskRule {
    pub family: Family,
    pub params: FamilyParams,
}

impl TaskRule {
    pub fn new(family: Family, params: FamilyParams) -> Result<Self> {
        if family == Family::Custom {
            return Err(Error::InvalidParameter("custom is not a built-in family".into()));
        }
        params.validate()?;
        Ok(Self { family, params })
    }
}

impl TaskOperator for TaskRule {
    fn family(&self) -> Family {
        self.family
    }

    fn weights(&self, query: &TaskQuery, bounds: &WeightBounds) -> Result<WeightVector> {
        let p = &self.params;
        let raw: Vec<f64> = match self.family {
            Family::Uniform => {
                bounds.check_feasible(query.perf.len())?;
                return Ok(WeightVector::uniform(query.perf.len()));
            }
            Family::InverseEntropy => query.mean_entropy.iter().map(|h| 1.0 / h.max(ENTROPY_FLOOR)).collect(),
            Family::FamilyA => query.perf.iter().map(|s| 1.0 / (1.0 - s + p.loss_offset)).collect(),
            Family::FamilyB => query.disagreement.iter().map(|d| (-d / p.tau).exp()).collect(),
            Family::FamilyC => softmax_scores(&query.perf, p.tau),
            Family::Custom => unreachable!(),
        };
        clip_normalize(&raw, bounds)
    }
}

/// `exp(s / tau)` shifted by the maximum so large `1/tau` cannot overflow.
fn softmax_scores(scores: &[f64], tau: f64) -> Vec<f64> {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().map(|s| ((s - top) / tau).exp()).collect()
}

pub fn task_weights_performance(world: &World, task: usize, bounds: &WeightBounds, tau: f64) -> Result<WeightVector> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let params = FamilyParams { tau, ..FamilyParams::default() };
    TaskRule::new(Family::FamilyC, params)?.weights(&TaskQuery::at(world, task)?, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn q(perf: Vec<f64>) -> TaskQuery {
        let k = perf.len();
        TaskQuery { perf, mean_entropy: vec![1.0; k], disagreement: vec![0.1; k] }
    }

    fn rule(family: Family, tau: f64) -> TaskRule {
        TaskRule::new(family, FamilyParams { tau, ..FamilyParams::default() }).unwrap()
    }

    #[test]
    fn performance_softmax() {
        let b = WeightBounds::new(0.01, 0.99, 1.0).unwrap();
        let w = rule(Family::FamilyC, 0.2).weights(&q(vec![0.9, 0.5]), &b).unwrap();
        // e^4.5 / (e^4.5 + e^2.5) = 1 / (1 + e^-2)
        assert_abs_diff_eq!(w[0], 1.0 / (1.0 + (-2f64).exp()), epsilon = 1e-12);
        assert_abs_diff_eq!(w[0], 0.8808, epsilon = 1e-4);
    }

    #[test]
    fn equal_scores_are_uniform() {
        let b = WeightBounds::new(0.1, 0.9, 1.0).unwrap();
        for family in Family::BUILTIN {
            let w = rule(family, 0.5).weights(&q(vec![0.7, 0.7, 0.7]), &b).unwrap();
            for i in 0..3 {
                assert_abs_diff_eq!(w[i], 1.0 / 3.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn high_temperature_is_uniform() {
        let b = WeightBounds::new(0.01, 0.99, 1.0).unwrap();
        let w = rule(Family::FamilyC, 1e7).weights(&q(vec![0.9, 0.1]), &b).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn inverse_loss_favors_better_teacher() {
        let b = WeightBounds::new(0.01, 0.99, 1.0).unwrap();
        let w = rule(Family::FamilyA, 0.5).weights(&q(vec![0.9, 0.5]), &b).unwrap();
        // 1/0.2 : 1/0.6
        assert_abs_diff_eq!(w[0], 0.75, epsilon = 1e-12);
    }
}
