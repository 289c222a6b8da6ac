//! Seeded generator for toy worlds.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::distribution::TokenDistribution;
use super::sampler::Sampler;
use super::world::{ContextSpec, InputSpec, TaskSpec, TeacherBank, VocabularySpec, World};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub teachers: usize,
    pub vocab: usize,
    pub tasks: usize,
    pub contexts: usize,
    pub inputs: usize,
    /// Dirichlet concentration of each teacher distribution.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    /// Mixing weight of the uniform distribution into every teacher output.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default)]
    pub safety_set: Vec<usize>,
    /// Context indices flagged as safety-critical.
    #[serde(default)]
    pub safety_contexts: Vec<usize>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
}

fn default_concentration() -> f64 {
    1.0
}

fn default_smoothing() -> f64 {
    0.1
}

fn default_feature_dim() -> usize {
    2
}

impl SyntheticWorld {
    /// The toy world used by the convergence and stability experiments.
    pub fn toy(seed: u64) -> Self {
        Self {
            seed,
            teachers: 3,
            vocab: 10,
            tasks: 2,
            contexts: 2,
            inputs: 8,
            concentration: 1.0,
            smoothing: 0.1,
            safety_set: vec![0, 1],
            safety_contexts: vec![1],
            feature_dim: 2,
        }
    }

    pub fn generate(&self) -> Result<World> {
        if self.teachers == 0 || self.tasks == 0 || self.contexts == 0 || self.inputs == 0 {
            return Err(Error::InvalidParameter("synthetic world sizes must be positive".into()));
        }
        if !(self.concentration > 0.0) || !(0.0..=1.0).contains(&self.smoothing) {
            return Err(Error::InvalidParameter("need concentration > 0 and smoothing in [0, 1]".into()));
        }
        if let Some(&c) = self.safety_contexts.iter().find(|&&c| c >= self.contexts) {
            return Err(Error::InvalidParameter(format!("safety context {c} out of range")));
        }
        let mut sampler = Sampler::new(self.seed);
        let vocab = VocabularySpec::new(self.vocab, self.safety_set.clone())?;

        let inputs = (0..self.inputs)
            .map(|x| InputSpec { id: x as u32, features: (0..self.feature_dim).map(|_| sampler.uniform()).collect() })
            .collect();

        // overlapping windows of inputs, one per task
        let window = if self.tasks == 1 { self.inputs } else { (self.inputs * 3).div_ceil(4).max(1) };
        let tasks = (0..self.tasks)
            .map(|t| {
                let start = if self.tasks == 1 { 0 } else { t * (self.inputs - window) / (self.tasks - 1) };
                TaskSpec {
                    id: t as u32,
                    inputs: (start..start + window).map(|x| (x, 1.0 / window as f64)).collect(),
                    importance: 1.0 / self.tasks as f64,
                }
            })
            .collect();

        let contexts = (0..self.contexts)
            .map(|c| ContextSpec {
                id: c as u32,
                features: (0..self.feature_dim).map(|_| sampler.uniform()).collect(),
                measure_weight: 1.0 / self.contexts as f64,
                safety_critical: self.safety_contexts.contains(&c),
            })
            .collect();

        let gamma = Gamma::new(self.concentration, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut table = Vec::with_capacity(self.inputs * self.contexts);
        for _ in 0..self.inputs * self.contexts {
            let mut cell = Vec::with_capacity(self.teachers);
            for _ in 0..self.teachers {
                let draws: Vec<f64> = (0..self.vocab).map(|_| gamma.sample(sampler.rng_mut()).max(1e-300)).collect();
                let total: f64 = draws.iter().sum();
                let probs = draws
                    .iter()
                    .map(|g| (1.0 - self.smoothing) * g / total + self.smoothing / self.vocab as f64)
                    .collect();
                cell.push(TokenDistribution::new(probs)?);
            }
            table.push(cell);
        }
        let perf = (0..self.teachers)
            .map(|_| (0..self.tasks).map(|_| Some(sampler.uniform_range(0.5, 0.95))).collect())
            .collect();
        let safety = (0..self.teachers).map(|_| Some(sampler.uniform_range(0.1, 0.9))).collect();
        let bank = TeacherBank::new(self.teachers, self.contexts, table, perf, safety)?;
        World::new(vocab, inputs, tasks, contexts, bank)
    }
}
