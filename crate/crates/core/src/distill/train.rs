//! Single-sample stochastic gradient training with `eta_t = eta0 / (1 + t)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::objective::TargetTable;
use super::rate::{origin_fit, OriginFit};
use crate::composition::{mix_target, CellWeights, UnifiedWeightOperator};
use crate::domain::{softmax, Sampler, StudentParams, TokenDistribution, WeightVector, World};
use crate::error::{Error, Result};

/// Gradient-norm tolerance of the reference full-batch solve.
pub const REFERENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub eta0: f64,
    pub steps: usize,
    /// Ridge strength `lambda_reg`.
    pub ridge: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { eta0: 1.0, steps: 50_000, ridge: 0.01, seed: 0, eval_every: 500 }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            problems.push(format!("eta0 must be positive, got {}", self.eta0));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            problems.push(format!("ridge must be nonnegative, got {}", self.ridge));
        }
        if self.eval_every == 0 {
            problems.push("eval_every must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        self.eta0 / (1.0 + step as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Pointwise mean of traces recorded at the same steps.
    pub fn average(traces: &[TrainTrace]) -> Result<TrainTrace> {
        let first = traces.first().ok_or(Error::InsufficientTrace { points: 0, needed: 1 })?;
        if traces.iter().any(|t| {
            t.records.len() != first.records.len()
                || t.records.iter().zip(&first.records).any(|(a, b)| a.step != b.step)
        }) {
            return Err(Error::InvalidParameter("traces were recorded at different steps".into()));
        }
        let n = traces.len() as f64;
        let records = (0..first.records.len())
            .map(|i| {
                let mean = |f: fn(&TraceRecord) -> f64| traces.iter().map(|t| f(&t.records[i])).sum::<f64>() / n;
                TraceRecord {
                    step: first.records[i].step,
                    loss: mean(|r| r.loss),
                    mean_kl: mean(|r| r.mean_kl),
                    grad_norm: mean(|r| r.grad_norm),
                    lr: first.records[i].lr,
                }
            })
            .collect();
        Ok(TrainTrace { records })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "loss", "mean_kl", "grad_norm", "lr"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                format!("{:.16e}", r.loss),
                format!("{:.16e}", r.mean_kl),
                format!("{:.16e}", r.grad_norm),
                format!("{:.16e}", r.lr),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }
}

fn record(table: &TargetTable, theta: &StudentParams, step: usize, config: &TrainerConfig) -> Result<TraceRecord> {
    let loss = table.loss(theta)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    Ok(TraceRecord {
        step,
        loss,
        mean_kl: table.mean_kl(theta)?,
        grad_norm: table.grad_norm(theta)?,
        lr: config.lr(step),
    })
}

fn should_record(step: usize, config: &TrainerConfig) -> bool {
    step.is_multiple_of(config.eval_every) || step == config.steps
}

/// Per-step weight noise for [`noisy_weight_train`].
struct WeightNoise<'a> {
    world: &'a World,
    cells: Vec<CellWeights>,
    delta: f64,
    sampler: Sampler,
    buf: Vec<f64>,
}

impl WeightNoise<'_> {
    fn target(&mut self, table: &TargetTable, idx: usize) -> Result<&[f64]> {
        let cell = &table.cells[idx];
        let (delta, sampler) = (self.delta, &mut self.sampler);
        let noisy = self.cells[idx].map(|w| {
            let moved: Vec<f64> = w.0.iter().map(|v| v + delta * sampler.uniform_range(-1.0, 1.0)).collect();
            let total: f64 = moved.iter().sum();
            Ok(WeightVector(moved.iter().map(|v| v / total).collect()))
        })?;
        let q = mix_target(&noisy, self.world.bank.dists(cell.input, cell.context))?;
        self.buf.copy_from_slice(q.probs());
        Ok(&self.buf)
    }
}

fn sgd_loop(
    config: &TrainerConfig,
    world: &World,
    table: &TargetTable,
    mut noise: Option<WeightNoise<'_>>,
) -> Result<(StudentParams, TrainTrace)> {
    config.validate()?;
    let mut theta = StudentParams::zeros(table.n_inputs, table.vocab, config.ridge);
    let mut sampler = Sampler::new(config.seed);
    let mut trace = TrainTrace { records: vec![record(table, &theta, 0, config)?] };
    for t in 0..config.steps {
        let (task, x, c) = world.sample_point(&mut sampler);
        let idx = table.cell_index(task, x, c).ok_or_else(|| {
            Error::InvalidWorld(format!("sampled cell (task {task}, input {x}, context {c}) has no mass"))
        })?;
        let q: &[f64] = match noise.as_mut() {
            Some(n) => n.target(table, idx)?,
            None => table.cells[idx].target.probs(),
        };
        let lr = config.lr(t);
        let p = softmax(&theta.logits[x]);
        for (r, row) in theta.logits.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let mut g = config.ridge * *v;
                if r == x {
                    g += p[i] - q[i];
                }
                *v -= lr * g;
            }
        }
        if theta.logits[x].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step: t + 1 });
        }
        if should_record(t + 1, config) {
            trace.records.push(record(table, &theta, t + 1, config)?);
        }
    }
    Ok((theta, trace))
}

/// Trains the tabular student on the targets of `g`.
pub fn sgd_train(
    config: &TrainerConfig,
    g: &UnifiedWeightOperator,
    world: &World,
) -> Result<(StudentParams, TrainTrace)> {
    let table = TargetTable::build(g, world)?;
    sgd_loop(config, world, &table, None)
}

/// Trains on a prebuilt target table.
pub fn sgd_train_table(
    config: &TrainerConfig,
    table: &TargetTable,
    world: &World,
) -> Result<(StudentParams, TrainTrace)> {
    sgd_loop(config, world, table, None)
}

/// Reference trainer for classic knowledge distillation against the plain
/// average of the teachers, written without any weighting operator.
pub fn classic_uniform_train(config: &TrainerConfig, world: &World) -> Result<(StudentParams, TrainTrace)> {
    config.validate()?;
    let k = world.k();
    let share = 1.0 / k as f64;
    let table = TargetTable::from_fn(world, |_, x, c| {
        let dists = world.bank.dists(x, c);
        let mut q = vec![0.0; world.vocab_size()];
        for (i, qi) in q.iter_mut().enumerate() {
            for d in dists {
                *qi += share * d.probs()[i];
            }
        }
        TokenDistribution::new(q)
    })?;

    let n = world.inputs.len();
    let v = world.vocab_size();
    let mut logits = vec![vec![0.0; v]; n];
    let mut sampler = Sampler::new(config.seed);
    let snapshot = |logits: &Vec<Vec<f64>>| StudentParams { logits: logits.clone(), ridge: config.ridge };
    let mut records = vec![record(&table, &snapshot(&logits), 0, config)?];
    for t in 0..config.steps {
        let (task, x, c) = world.sample_point(&mut sampler);
        let q = table
            .cell_index(task, x, c)
            .map(|idx| table.cells[idx].target.probs())
            .ok_or(Error::InvalidWorld("sampled cell has no mass".into()))?;
        let lr = config.eta0 / (1.0 + t as f64);
        let p = softmax(&logits[x]);
        for r in 0..n {
            for i in 0..v {
                let mut g = config.ridge * logits[r][i];
                if r == x {
                    g += p[i] - q[i];
                }
                logits[r][i] -= lr * g;
            }
        }
        if logits[x].iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFiniteLoss { step: t + 1 });
        }
        if should_record(t + 1, config) {
            records.push(record(&table, &snapshot(&logits), t + 1, config)?);
        }
    }
    Ok((snapshot(&logits), TrainTrace { records }))
}

/// Checks that every unified weight of `g` leaves room for a perturbation of
/// size `delta` inside the effective bounds.
pub fn check_margin(g: &UnifiedWeightOperator, world: &World, delta: f64) -> Result<Vec<CellWeights>> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be nonnegative, got {delta}")));
    }
    let (lo, hi) = g.effective_bounds(world.k());
    let (lo, hi) = (lo + delta, hi - delta);
    let mut cells = Vec::new();
    for point in world.joint() {
        let cell = g.cell_weights(world, point.input, point.task, point.context)?;
        for w in &cell.groups {
            if let Some(&weight) = w.0.iter().find(|&&v| v < lo || v > hi) {
                return Err(Error::MarginViolated { delta, weight, lo, hi });
            }
        }
        cells.push(cell);
    }
    Ok(cells)
}

/// [`sgd_train`] with every weight evaluation perturbed by i.i.d. uniform
/// noise in `[-delta, delta]` per teacher and renormalized. The noise comes
/// from a separate stream, so the sampled cells match the clean run.
pub fn noisy_weight_train(
    config: &TrainerConfig,
    g: &UnifiedWeightOperator,
    world: &World,
    delta: f64,
) -> Result<(StudentParams, TrainTrace)> {
    let cells = check_margin(g, world, delta)?;
    let table = TargetTable::build(g, world)?;
    if delta == 0.0 {
        return sgd_loop(config, world, &table, None);
    }
    let noise = WeightNoise {
        world,
        cells,
        delta,
        sampler: Sampler::substream(config.seed, 1),
        buf: vec![0.0; world.vocab_size()],
    };
    sgd_loop(config, world, &table, Some(noise))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseRow {
    pub delta: f64,
    pub terminal_loss: f64,
    /// Terminal loss minus the clean optimum.
    pub gap: f64,
    /// `|terminal loss - terminal loss of the clean run with the same seed|`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSweep {
    pub l_star: f64,
    pub clean_terminal_loss: f64,
    pub rows: Vec<NoiseRow>,
    /// Fit of `excess` against `delta` through the origin (nonzero deltas).
    pub fit: Option<OriginFit>,
}

/// Runs the clean trainer and one noisy run per `delta` with a shared seed.
pub fn noise_sweep(
    config: &TrainerConfig,
    g: &UnifiedWeightOperator,
    world: &World,
    deltas: &[f64],
) -> Result<NoiseSweep> {
    let table = TargetTable::build(g, world)?;
    let l_star = table.solve(config.ridge, REFERENCE_TOL)?.loss;
    let (_, clean) = sgd_loop(config, world, &table, None)?;
    let clean_terminal_loss = clean.last().map_or(f64::NAN, |r| r.loss);
    let rows = deltas
        .iter()
        .map(|&delta| {
            let (_, trace) = noisy_weight_train(config, g, world, delta)?;
            let terminal_loss = trace.last().map_or(f64::NAN, |r| r.loss);
            Ok(NoiseRow {
                delta,
                terminal_loss,
                gap: terminal_loss - l_star,
                excess: (terminal_loss - clean_terminal_loss).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.delta > 0.0).map(|r| (r.delta, r.excess)).unzip();
    let fit = if xs.is_empty() { None } else { Some(origin_fit(&xs, &ys)?) };
    Ok(NoiseSweep { l_star, clean_terminal_loss, rows, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SyntheticWorld, WeightBounds};
    use crate::operators::{Family, FamilyParams};

    fn bounds() -> WeightBounds {
        WeightBounds::new(0.05, 0.9, 10.0).unwrap()
    }

    fn short(seed: u64) -> TrainerConfig {
        TrainerConfig { eta0: 1.0, steps: 3_000, ridge: 0.01, seed, eval_every: 100 }
    }

    #[test]
    fn uniform_operator_reproduces_classic_trainer() {
        let world = SyntheticWorld::toy(4).generate().unwrap();
        let g = UnifiedWeightOperator::uniform(bounds()).unwrap();
        let (theta, trace) = sgd_train(&short(9), &g, &world).unwrap();
        let (ref_theta, ref_trace) = classic_uniform_train(&short(9), &world).unwrap();
        assert_eq!(theta, ref_theta);
        assert_eq!(trace, ref_trace);
        assert_eq!(trace.to_csv_string().unwrap(), ref_trace.to_csv_string().unwrap());
    }

    #[test]
    fn zero_steps_returns_initial_student() {
        let world = SyntheticWorld::toy(4).generate().unwrap();
        let g = UnifiedWeightOperator::uniform(bounds()).unwrap();
        let config = TrainerConfig { steps: 0, ..short(0) };
        let (theta, trace) = sgd_train(&config, &g, &world).unwrap();
        assert_eq!(theta, StudentParams::zeros(8, 10, 0.01));
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].step, 0);
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let world = SyntheticWorld::toy(5).generate().unwrap();
        let g = UnifiedWeightOperator::same_family(Family::FamilyA, FamilyParams::default(), bounds()).unwrap();
        let (_, a) = sgd_train(&short(1), &g, &world).unwrap();
        let (_, b) = sgd_train(&short(1), &g, &world).unwrap();
        assert_eq!(a, b);
        assert!(a.records.windows(2).all(|w| w[0].step < w[1].step));
        assert!(a.last().unwrap().loss < a.records[0].loss);
        assert_eq!(a.last().unwrap().step, 3_000);
        let (_, c) = sgd_train(&short(2), &g, &world).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_matches_clean_run() {
        let world = SyntheticWorld::toy(5).generate().unwrap();
        let g = UnifiedWeightOperator::same_family(Family::FamilyB, FamilyParams::default(), bounds()).unwrap();
        let clean = sgd_train(&short(3), &g, &world).unwrap();
        let noisy = noisy_weight_train(&short(3), &g, &world, 0.0).unwrap();
        assert_eq!(clean, noisy);
        let perturbed = noisy_weight_train(&short(3), &g, &world, 0.01).unwrap();
        assert_ne!(clean.1, perturbed.1);
    }

    #[test]
    fn oversized_noise_violates_margin() {
        let world = SyntheticWorld::toy(5).generate().unwrap();
        let g = UnifiedWeightOperator::uniform(bounds()).unwrap();
        assert!(matches!(noisy_weight_train(&short(0), &g, &world, 0.5), Err(Error::MarginViolated { .. })));
    }

    #[test]
    fn divergence_is_reported() {
        let world = SyntheticWorld::toy(5).generate().unwrap();
        let g = UnifiedWeightOperator::uniform(bounds()).unwrap();
        let config = TrainerConfig { eta0: 1e308, ridge: 10.0, ..short(0) };
        assert!(matches!(sgd_train(&config, &g, &world), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn averaged_trace_and_csv() {
        let world = SyntheticWorld::toy(5).generate().unwrap();
        let g = UnifiedWeightOperator::uniform(bounds()).unwrap();
        let traces: Vec<TrainTrace> = (0..3).map(|s| sgd_train(&short(s), &g, &world).unwrap().1).collect();
        let mean = TrainTrace::average(&traces).unwrap();
        let expected = traces.iter().map(|t| t.records[5].loss).sum::<f64>() / 3.0;
        assert_eq!(mean.records[5].loss, expected);
        let csv = mean.to_csv_string().unwrap();
        assert!(csv.starts_with("step,loss,mean_kl,grad_norm,lr\n0,"));
        assert_eq!(csv.lines().count(), mean.records.len() + 1);
    }
}
