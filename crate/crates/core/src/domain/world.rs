//! The finite world an experiment runs in: vocabulary, inputs, tasks,
//! contexts and the teacher lookup tables.

use serde::{Deserialize, Serialize};

use super::distribution::TokenDistribution;
use super::sampler::Sampler;
use crate::error::{Error, Result};

/// Tolerance for measures declared in a world (task mixtures, importances,
/// context masses).
pub const CONSTRUCTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularySpec {
    pub size: usize,
    /// Safety-critical token indices, sorted and deduplicated.
    pub safety_set: Vec<usize>,
}

impl VocabularySpec {
    pub fn new(size: usize, mut safety_set: Vec<usize>) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidWorld(format!("vocabulary needs at least 2 tokens, got {size}")));
        }
        if let Some(&bad) = safety_set.iter().find(|&&i| i >= size) {
            return Err(Error::InvalidWorld(format!("safety token {bad} outside vocabulary of size {size}")));
        }
        safety_set.sort_unstable();
        safety_set.dedup();
        Ok(Self { size, safety_set })
    }

    pub fn is_safety_token(&self, token: usize) -> bool {
        self.safety_set.binary_search(&token).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub id: u32,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: u32,
    /// `(input index, sampling weight)` pairs: the task's data distribution.
    pub inputs: Vec<(usize, f64)>,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub id: u32,
    pub features: Vec<f64>,
    pub measure_weight: f64,
    pub safety_critical: bool,
}

/// K teachers as lookup tables, with per-task performance and per-teacher
/// safety scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherBank {
    k: usize,
    n_contexts: usize,
    /// Row-major over `(input, context)`; each cell holds K distributions.
    table: Vec<Vec<TokenDistribution>>,
    /// `perf[teacher][task]`
    perf: Vec<Vec<Option<f64>>>,
    safety: Vec<Option<f64>>,
}

impl TeacherBank {
    pub fn new(
        k: usize,
        n_contexts: usize,
        table: Vec<Vec<TokenDistribution>>,
        perf: Vec<Vec<Option<f64>>>,
        safety: Vec<Option<f64>>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidWorld("need at least one teacher".into()));
        }
        for (cell, dists) in table.iter().enumerate() {
            if dists.len() != k {
                return Err(Error::InvalidWorld(format!(
                    "table cell {cell} has {} distributions, expected {k}",
                    dists.len()
                )));
            }
        }
        if perf.len() != k || safety.len() != k {
            return Err(Error::InvalidWorld(format!("score tables must have one row per teacher ({k})")));
        }
        let in_unit = |s: &f64| (0.0..=1.0).contains(s);
        if perf.iter().flatten().flatten().any(|s| !in_unit(s)) || safety.iter().flatten().any(|s| !in_unit(s)) {
            return Err(Error::InvalidWorld("scores must lie in [0, 1]".into()));
        }
        Ok(Self { k, n_contexts, table, perf, safety })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dists(&self, input: usize, context: usize) -> &[TokenDistribution] {
        &self.table[input * self.n_contexts + context]
    }

    pub(crate) fn dists_mut(&mut self, input: usize, context: usize) -> &mut Vec<TokenDistribution> {
        &mut self.table[input * self.n_contexts + context]
    }

    pub fn perf_score(&self, teacher: usize, task: usize) -> Option<f64> {
        self.perf.get(teacher)?.get(task).copied().flatten()
    }

    pub(crate) fn perf_mut(&mut self) -> &mut Vec<Vec<Option<f64>>> {
        &mut self.perf
    }

    /// Performance scores of every teacher on `task`.
    pub fn perf_scores(&self, task: usize) -> Result<Vec<f64>> {
        (0..self.k)
            .map(|k| self.perf_score(k, task).ok_or(Error::MissingScores { what: "performance", teacher: k }))
            .collect()
    }

    pub fn safety_scores(&self) -> Result<Vec<f64>> {
        self.safety
            .iter()
            .enumerate()
            .map(|(k, s)| s.ok_or(Error::MissingScores { what: "safety", teacher: k }))
            .collect()
    }
}

/// A fully cross-referenced experiment world. Indices (not ids) are used
/// everywhere after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub vocab: VocabularySpec,
    pub inputs: Vec<InputSpec>,
    pub tasks: Vec<TaskSpec>,
    pub contexts: Vec<ContextSpec>,
    pub bank: TeacherBank,
}

/// One `(task, input, context)` cell of the joint sampling measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub task: usize,
    pub input: usize,
    pub context: usize,
    pub prob: f64,
}

impl World {
    pub fn new(
        vocab: VocabularySpec,
        inputs: Vec<InputSpec>,
        tasks: Vec<TaskSpec>,
        contexts: Vec<ContextSpec>,
        bank: TeacherBank,
    ) -> Result<Self> {
        let world = Self { vocab, inputs, tasks, contexts, bank };
        world.validate()?;
        Ok(world)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidWorld(msg));
        if self.inputs.is_empty() || self.tasks.is_empty() || self.contexts.is_empty() {
            return fail("world needs at least one input, task and context".into());
        }
        let dim = self.inputs[0].features.len();
        if self.inputs.iter().any(|x| x.features.len() != dim) {
            return fail("input feature dimensions differ".into());
        }
        let importance: f64 = self.tasks.iter().map(|t| t.importance).sum();
        if self.tasks.iter().any(|t| t.importance < 0.0) || (importance - 1.0).abs() > CONSTRUCTION_TOL {
            return fail(format!("task importances must be nonnegative and sum to 1, got {importance}"));
        }
        for task in &self.tasks {
            let mass: f64 = task.inputs.iter().map(|&(_, w)| w).sum();
            if task.inputs.iter().any(|&(_, w)| w < 0.0) || (mass - 1.0).abs() > CONSTRUCTION_TOL {
                return fail(format!("task {} input weights sum to {mass}", task.id));
            }
            if let Some(&(bad, _)) = task.inputs.iter().find(|&&(i, _)| i >= self.inputs.len()) {
                return fail(format!("task {} references input index {bad}", task.id));
            }
        }
        let mass: f64 = self.contexts.iter().map(|c| c.measure_weight).sum();
        if self.contexts.iter().any(|c| c.measure_weight < 0.0) || (mass - 1.0).abs() > CONSTRUCTION_TOL {
            return fail(format!("context measure weights sum to {mass}"));
        }
        if self.bank.n_contexts != self.contexts.len()
            || self.bank.table.len() != self.inputs.len() * self.contexts.len()
        {
            return fail("teacher table must cover every (input, context) pair".into());
        }
        for dists in &self.bank.table {
            if let Some(d) = dists.iter().find(|d| d.len() != self.vocab.size) {
                return fail(format!(
                    "teacher distribution of length {} in vocabulary of size {}",
                    d.len(),
                    self.vocab.size
                ));
            }
        }
        if self.bank.perf.iter().any(|row| row.len() != self.tasks.len()) {
            return fail("performance table needs one column per task".into());
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.bank.k()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size
    }

    /// Every cell of the joint measure `lambda_t * D_t(x) * mu(c)` with
    /// positive mass, in task-input-context order.
    pub fn joint(&self) -> Vec<WorldPoint> {
        let mut points = Vec::new();
        for (t, task) in self.tasks.iter().enumerate() {
            for &(x, w) in &task.inputs {
                for (c, ctx) in self.contexts.iter().enumerate() {
                    let prob = task.importance * w * ctx.measure_weight;
                    if prob > 0.0 {
                        points.push(WorldPoint { task: t, input: x, context: c, prob });
                    }
                }
            }
        }
        points
    }

    /// Marginal probability of each input under the joint measure.
    pub fn input_marginal(&self) -> Vec<f64> {
        let mut marginal = vec![0.0; self.inputs.len()];
        for task in &self.tasks {
            for &(x, w) in &task.inputs {
                marginal[x] += task.importance * w;
            }
        }
        marginal
    }

    /// Draws task, then input, then context.
    pub fn sample_point(&self, sampler: &mut Sampler) -> (usize, usize, usize) {
        let importance: Vec<f64> = self.tasks.iter().map(|t| t.importance).collect();
        let t = sampler.categorical(&importance);
        let task = &self.tasks[t];
        let weights: Vec<f64> = task.inputs.iter().map(|&(_, w)| w).collect();
        let x = task.inputs[sampler.categorical(&weights)].0;
        let masses: Vec<f64> = self.contexts.iter().map(|c| c.measure_weight).collect();
        let c = sampler.categorical(&masses);
        (t, x, c)
    }

    pub fn input_index(&self, id: u32) -> Option<usize> {
        self.inputs.iter().position(|x| x.id == id)
    }

    pub fn context_index(&self, id: u32) -> Option<usize> {
        self.contexts.iter().position(|c| c.id == id)
    }

    pub fn task_index(&self, id: u32) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_world() -> World {
        let vocab = VocabularySpec::new(3, vec![0]).unwrap();
        let inputs = vec![InputSpec { id: 10, features: vec![0.0] }, InputSpec { id: 11, features: vec![1.0] }];
        let tasks = vec![
            TaskSpec { id: 0, inputs: vec![(0, 1.0)], importance: 0.5 },
            TaskSpec { id: 1, inputs: vec![(0, 0.25), (1, 0.75)], importance: 0.5 },
        ];
        let contexts = vec![
            ContextSpec { id: 0, features: vec![], measure_weight: 0.6, safety_critical: false },
            ContextSpec { id: 1, features: vec![], measure_weight: 0.4, safety_critical: true },
        ];
        let d = TokenDistribution::uniform(3);
        let table = vec![vec![d.clone(), d.clone()]; 4];
        let bank = TeacherBank::new(
            2,
            2,
            table,
            vec![vec![Some(0.5), Some(0.7)], vec![Some(0.6), None]],
            vec![Some(0.9), Some(0.1)],
        )
        .unwrap();
        World::new(vocab, inputs, tasks, contexts, bank).unwrap()
    }

    #[test]
    fn joint_measure_sums_to_one() {
        let w = tiny_world();
        let total: f64 = w.joint().iter().map(|p| p.prob).sum();
        assert!((total - 1.0).abs() < 1e-15);
        let marginal = w.input_marginal();
        assert!((marginal[0] - 0.625).abs() < 1e-15);
        assert!((marginal[1] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn missing_score_is_reported() {
        let w = tiny_world();
        assert!(w.bank.perf_scores(0).is_ok());
        assert!(matches!(w.bank.perf_scores(1), Err(Error::MissingScores { teacher: 1, .. })));
    }

    #[test]
    fn rejects_bad_vocab() {
        assert!(VocabularySpec::new(1, vec![]).is_err());
        assert!(VocabularySpec::new(3, vec![3]).is_err());
    }

    #[test]
    fn rejects_unnormalized_task() {
        let mut w = tiny_world();
        w.tasks[0].inputs[0].1 = 0.9;
        assert!(w.validate().is_err());
    }

    #[test]
    fn sampling_frequencies_follow_declared_weights() {
        let w = tiny_world();
        let mut s = Sampler::new(0);
        let n = 100_000;
        let mut task_counts = [0usize; 2];
        let mut input_counts = [0usize; 2];
        let mut ctx_counts = [0usize; 2];
        for _ in 0..n {
            let (t, x, c) = w.sample_point(&mut s);
            task_counts[t] += 1;
            input_counts[x] += 1;
            ctx_counts[c] += 1;
        }
        let f = |c: usize| c as f64 / n as f64;
        assert!((f(task_counts[0]) - 0.5).abs() < 0.01);
        assert!((f(input_counts[0]) - 0.625).abs() < 0.01);
        assert!((f(ctx_counts[1]) - 0.4).abs() < 0.01);
    }
}
