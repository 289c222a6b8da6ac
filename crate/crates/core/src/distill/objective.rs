//! The adaptive distillation objective over a finite world and its exact
//! gradient for the tabular softmax student.

use super::optim::{minimize, norm, Minimum};
use crate::composition::UnifiedWeightOperator;
use crate::domain::{kl_divergence, softmax, student::log_sum_exp, StudentParams, TokenDistribution, World};
use crate::error::{Error, Result};

/// Target distribution of one `(task, input, context)` cell of the joint
/// sampling measure.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCell {
    pub task: usize,
    pub input: usize,
    pub context: usize,
    pub prob: f64,
    pub target: TokenDistribution,
}

/// All cell targets of a world plus the per-input aggregates the loss and
/// gradient depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTable {
    pub cells: Vec<TargetCell>,
    pub n_inputs: usize,
    pub vocab: usize,
    /// Marginal mass `a_x` of each input.
    pub input_mass: Vec<f64>,
    /// `a_x * mean target of x`, i.e. the measure-weighted sum of targets.
    pub weighted_target: Vec<Vec<f64>>,
    index: Vec<Option<usize>>,
    n_contexts: usize,
}

/// Result of solving the full-batch problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub params: StudentParams,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl TargetTable {
    /// Targets of the unified operator `g` at every cell.
    pub fn build(g: &UnifiedWeightOperator, world: &World) -> Result<Self> {
        Self::from_fn(world, |t, x, c| g.target(world, x, t, c))
    }

    pub fn from_fn(
        world: &World,
        mut target: impl FnMut(usize, usize, usize) -> Result<TokenDistribution>,
    ) -> Result<Self> {
        let n_inputs = world.inputs.len();
        let n_contexts = world.contexts.len();
        let vocab = world.vocab_size();
        let mut index = vec![None; world.tasks.len() * n_inputs * n_contexts];
        let mut input_mass = vec![0.0; n_inputs];
        let mut weighted_target = vec![vec![0.0; vocab]; n_inputs];
        let mut cells = Vec::new();
        for point in world.joint() {
            let q = target(point.task, point.input, point.context)?;
            if q.len() != vocab {
                return Err(Error::DimensionMismatch { expected: vocab, got: q.len() });
            }
            input_mass[point.input] += point.prob;
            for (m, p) in weighted_target[point.input].iter_mut().zip(q.probs()) {
                *m += point.prob * p;
            }
            index[(point.task * n_inputs + point.input) * n_contexts + point.context] = Some(cells.len());
            cells.push(TargetCell {
                task: point.task,
                input: point.input,
                context: point.context,
                prob: point.prob,
                target: q,
            });
        }
        Ok(Self { cells, n_inputs, vocab, input_mass, weighted_target, index, n_contexts })
    }

    pub fn cell_index(&self, task: usize, input: usize, context: usize) -> Option<usize> {
        self.index.get((task * self.n_inputs + input) * self.n_contexts + context).copied().flatten()
    }

    /// Measure-weighted average target of input `x` (uniform if `x` has no mass).
    pub fn mean_target(&self, input: usize) -> Vec<f64> {
        let a = self.input_mass[input];
        if a > 0.0 {
            self.weighted_target[input].iter().map(|m| m / a).collect()
        } else {
            vec![1.0 / self.vocab as f64; self.vocab]
        }
    }

    /// `E[CE(q, softmax(theta_x))] + (ridge / 2) |theta|^2`.
    pub fn loss(&self, theta: &StudentParams) -> Result<f64> {
        theta.check_shape(self.n_inputs, self.vocab)?;
        let mut total = 0.0;
        for (x, row) in theta.logits.iter().enumerate().take(self.n_inputs) {
            let a = self.input_mass[x];
            if a > 0.0 {
                let linear: f64 = self.weighted_target[x].iter().zip(row).map(|(m, z)| m * z).sum();
                total += a * log_sum_exp(row) - linear;
            }
        }
        Ok(total + 0.5 * theta.ridge * theta.squared_norm())
    }

    /// Row `x` is `a_x (softmax(theta_x) - mean target) + ridge * theta_x`.
    pub fn gradient(&self, theta: &StudentParams) -> Result<Vec<Vec<f64>>> {
        theta.check_shape(self.n_inputs, self.vocab)?;
        Ok(theta
            .logits
            .iter()
            .enumerate()
            .take(self.n_inputs)
            .map(|(x, row)| {
                let p = softmax(row);
                let a = self.input_mass[x];
                (0..self.vocab).map(|i| a * p[i] - self.weighted_target[x][i] + theta.ridge * row[i]).collect()
            })
            .collect())
    }

    pub fn grad_norm(&self, theta: &StudentParams) -> Result<f64> {
        Ok(self.gradient(theta)?.iter().flatten().map(|g| g * g).sum::<f64>().sqrt())
    }

    /// `sum_x a_x KL(mean target of x || softmax(theta_x))`.
    pub fn mean_kl(&self, theta: &StudentParams) -> Result<f64> {
        theta.check_shape(self.n_inputs, self.vocab)?;
        Ok((0..self.n_inputs)
            .filter(|&x| self.input_mass[x] > 0.0)
            .map(|x| self.input_mass[x] * kl_divergence(&self.mean_target(x), &theta.distribution(x)))
            .sum())
    }

    /// Expected target entropy `E[H(q)]`, the loss floor at `ridge = 0`.
    pub fn expected_target_entropy(&self) -> f64 {
        self.cells.iter().map(|c| c.prob * c.target.entropy()).sum()
    }

    pub fn params_from_flat(&self, flat: &[f64], ridge: f64) -> StudentParams {
        StudentParams { logits: flat.chunks(self.vocab).map(<[f64]>::to_vec).collect(), ridge }
    }

    /// Value and flattened gradient at a flattened parameter vector.
    pub fn value_and_gradient(&self, flat: &[f64], ridge: f64) -> (f64, Vec<f64>) {
        let theta = self.params_from_flat(flat, ridge);
        let value = self.loss(&theta).unwrap_or(f64::NAN);
        let grad = self
            .gradient(&theta)
            .map(|g| g.into_iter().flatten().collect())
            .unwrap_or_else(|_| vec![f64::NAN; flat.len()]);
        (value, grad)
    }

    /// Full-batch solve from `start` to gradient norm `tol`.
    pub fn solve_from(&self, start: &StudentParams, tol: f64) -> Result<Solution> {
        start.check_shape(self.n_inputs, self.vocab)?;
        let ridge = start.ridge;
        let m: Minimum = minimize(|v| self.value_and_gradient(v, ridge), start.flat(), tol, 200_000);
        Ok(Solution {
            params: self.params_from_flat(&m.x, ridge),
            loss: m.value,
            grad_norm: norm(&self.value_and_gradient(&m.x, ridge).1),
            iterations: m.iterations,
            converged: m.converged,
        })
    }

    /// Full-batch solve from the zero student.
    pub fn solve(&self, ridge: f64, tol: f64) -> Result<Solution> {
        self.solve_from(&StudentParams::zeros(self.n_inputs, self.vocab, ridge), tol)
    }
}

pub fn kd_loss(theta: &StudentParams, g: &UnifiedWeightOperator, world: &World) -> Result<f64> {
    TargetTable::build(g, world)?.loss(theta)
}

pub fn kd_gradient(theta: &StudentParams, g: &UnifiedWeightOperator, world: &World) -> Result<Vec<Vec<f64>>> {
    TargetTable::build(g, world)?.gradient(theta)
}

pub fn mean_kl(theta: &StudentParams, g: &UnifiedWeightOperator, world: &World) -> Result<f64> {
    TargetTable::build(g, world)?.mean_kl(theta)
}
