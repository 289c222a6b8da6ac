//! Dispatch from a validated config to the experiment suites.

use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentSpec, Threshold};
use super::record::{Assertion, Cell, RunRecord, Table};
use crate::composition::{weighted_ensemble, UnifiedWeightOperator};
use crate::distill::train::REFERENCE_TOL;
use crate::distill::{classic_uniform_train, fit_convergence_rate, sgd_train, TargetTable, TrainTrace, TrainerConfig};
use crate::domain::{Sampler, StudentParams, WeightBounds, WeightVector, World};
use crate::dynamics::{
    constant_target_world, estimate_contraction, gradient_variance_ratio, iterate_to_fixed_point,
    perturbation_experiment, random_feasible, WeightUpdateConfig,
};
use crate::error::{Error, Result};
use crate::operators::{
    check_conformance, check_pareto_compat, inverse_entropy_weights, pareto::grid_axis, ContextRule, Family,
    FamilyParams, OperatorRef, QuadraticLoss, Scale, TaskRule, TokenRule,
};
use crate::safety::{
    dual_ascent_solve, jensen_preservation_check, kkt_residuals, max_achievable_safety, pareto_sweep, SafetyConfig,
    SafetyProblem,
};

/// Envelope slack for the geometric fixed-point bound.
const ENVELOPE_SLACK: f64 = 1e-6;
/// Tolerance on the constant-target contraction factor.
const CONTROL_TOL: f64 = 1e-9;
/// Rounding slack of the sweep monotonicity checks.
const SWEEP_TOL: f64 = 1e-9;
/// Finite-difference step of the gradient check.
const FD_STEP: f64 = 1e-5;

/// Runs the configured experiment. Module errors are returned with the
/// experiment kind and config hash attached.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    let mut record = RunRecord::new(config.kind(), &config.hash, config.seed());
    let outcome = match &config.raw.experiment {
        ExperimentSpec::Conformance { samples, families } => {
            conformance(config, *samples, families.as_deref().unwrap_or(&Family::BUILTIN), &mut record)
        }
        ExperimentSpec::Train { seeds } => train(config, *seeds, &mut record),
        ExperimentSpec::Rate { seeds, kl_tol, slope_range, fd_tol, slope_agreement } => {
            rate(config, *seeds, *kl_tol, *slope_range, *fd_tol, *slope_agreement, &mut record)
        }
        ExperimentSpec::FixedPoint { beta, starts, pairs, max_iters, tol, agree_tol, constant_control } => {
            let update = WeightUpdateConfig { beta: *beta, max_iters: *max_iters, tol: *tol };
            fixed_point(config, update, *starts, *pairs, *agree_tol, *constant_control, &mut record)
        }
        ExperimentSpec::Perturbation { deltas, min_r_squared, max_spread } => {
            perturbation(config, deltas, *min_r_squared, *max_spread, &mut record)
        }
        ExperimentSpec::Variance { samples, families, uniform_tol } => {
            variance(config, *samples, families, *uniform_tol, &mut record)
        }
        ExperimentSpec::Safety {
            threshold,
            dual_step,
            max_dual_iters,
            kkt_tol,
            inactive_check,
            preservation_check,
            ..
        } => {
            let opts = SafetyOptions {
                threshold: *threshold,
                dual_step: *dual_step,
                max_dual_iters: *max_dual_iters,
                kkt_tol: *kkt_tol,
                inactive_check: *inactive_check,
                preservation_check: *preservation_check,
            };
            safety(config, opts, &mut record)
        }
        ExperimentSpec::Pareto { mu_grid, mu_max, points, .. } => {
            let grid = mu_grid
                .clone()
                .unwrap_or_else(|| (0..*points).map(|i| mu_max * i as f64 / (*points - 1) as f64).collect());
            pareto(config, &grid, &mut record)
        }
        ExperimentSpec::AppendixA {
            entropies,
            expected_weights,
            expected_uniform,
            expected_adaptive,
            weight_tol,
            uniform_tol,
            adaptive_tol,
            min_gain,
        } => appendix_a(
            config,
            AppendixExpectations {
                entropies,
                weights: expected_weights,
                uniform: expected_uniform,
                adaptive: expected_adaptive,
                weight_tol: *weight_tol,
                uniform_tol: *uniform_tol,
                adaptive_tol: *adaptive_tol,
                min_gain: *min_gain,
            },
            &mut record,
        ),
    };
    outcome
        .map_err(|e| Error::InvalidParameter(format!("{} run [{}] failed: {e}", config.kind(), &config.hash[..12])))?;
    record.finished = super::record::unix_now();
    Ok(record)
}

fn operator_for(scale: Scale, family: Family, params: FamilyParams) -> Result<OperatorBox> {
    Ok(match scale {
        Scale::Token => OperatorBox::Token(TokenRule::new(family, params)?),
        Scale::Task => OperatorBox::Task(TaskRule::new(family, params)?),
        Scale::Context => OperatorBox::Context(ContextRule::new(family, params)?),
    })
}

enum OperatorBox {
    Token(TokenRule),
    Task(TaskRule),
    Context(ContextRule),
}

impl OperatorBox {
    fn as_ref(&self) -> OperatorRef<'_> {
        match self {
            OperatorBox::Token(op) => OperatorRef::Token(op),
            OperatorBox::Task(op) => OperatorRef::Task(op),
            OperatorBox::Context(op) => OperatorRef::Context(op),
        }
    }
}

fn conformance(config: &ExperimentConfig, samples: usize, families: &[Family], record: &mut RunRecord) -> Result<()> {
    let params = config.raw.operators.params;
    let combos: Vec<(usize, Family, Scale)> = families
        .iter()
        .flat_map(|&f| [Scale::Token, Scale::Task, Scale::Context].map(move |s| (f, s)))
        .enumerate()
        .map(|(i, (f, s))| (i, f, s))
        .collect();
    let reports = combos
        .par_iter()
        .map(|&(i, family, scale)| {
            let op = operator_for(scale, family, params)?;
            let mut sampler = Sampler::substream(config.seed(), i as u64);
            Ok(check_conformance(op.as_ref(), &config.world, &config.bounds, &mut sampler, samples))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = Table::new("conformance", &["family", "scale", "axiom", "passed", "worst_violation", "samples"]);
    for report in &reports {
        for check in report.checks() {
            table.push(vec![
                report.family.name().into(),
                report.scale.to_string().into(),
                check.axiom.into(),
                usize::from(check.passed).into(),
                check.worst_violation.into(),
                check.samples.into(),
            ]);
        }
        let name = format!("{}/{}", report.family, report.scale);
        let mut assertion = Assertion::holds(name, report.all_passed() && report.samples >= samples);
        if let Some(check) = report.checks().find(|c| !c.passed) {
            assertion = assertion.with_detail(format!(
                "{} violated: worst {:.3e} at {}",
                check.axiom,
                check.worst_violation,
                check.worst_point.as_deref().unwrap_or("?")
            ));
        } else if let Some(err) = &report.first_error {
            assertion = assertion.with_detail(format!("evaluation error: {err}"));
        }
        record.assert(assertion);
    }
    record.tables.push(table);

    // task-scale Pareto compatibility on a fixed convex instance
    let l1 = QuadraticLoss::new(vec![1.0, -0.5], vec![1.0, 3.0])?;
    let l2 = QuadraticLoss::new(vec![-1.0, 0.7], vec![2.0, 0.5])?;
    let axis = grid_axis(-2.0, 2.0, 0.05);
    let lambdas: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let pareto = check_pareto_compat(&l1, &l2, &[axis.clone(), axis], &lambdas)?;
    record.assert(Assertion::holds("task pareto compatibility", pareto.passed));
    Ok(())
}

fn seeded(trainer: &TrainerConfig, offset: usize) -> TrainerConfig {
    TrainerConfig { seed: trainer.seed.wrapping_add(offset as u64), ..*trainer }
}

fn trace_table(name: &str, trace: &TrainTrace) -> Table {
    let mut table = Table::new(name, &["step", "loss", "mean_kl", "grad_norm", "lr"]);
    for r in &trace.records {
        table.push(vec![r.step.into(), r.loss.into(), r.mean_kl.into(), r.grad_norm.into(), r.lr.into()]);
    }
    table
}

fn train(config: &ExperimentConfig, seeds: usize, record: &mut RunRecord) -> Result<()> {
    let g = config.operator()?;
    let runs = (0..seeds)
        .into_par_iter()
        .map(|s| sgd_train(&seeded(&config.trainer, s), &g, &config.world))
        .collect::<Result<Vec<_>>>()?;
    let traces: Vec<TrainTrace> = runs.iter().map(|(_, t)| t.clone()).collect();
    let mean = TrainTrace::average(&traces)?;
    let first = mean.records.first().expect("trace records step 0");
    let last = mean.last().expect("trace records step 0");
    record.assert(Assertion::holds("terminal loss finite", last.loss.is_finite()));
    record.assert(Assertion::at_most("terminal loss <= initial loss", first.loss, last.loss));
    if g.is_uniform() {
        let classic = (0..seeds)
            .into_par_iter()
            .map(|s| classic_uniform_train(&seeded(&config.trainer, s), &config.world))
            .collect::<Result<Vec<_>>>()?;
        let identical = runs.iter().zip(&classic).all(|((ta, a), (tb, b))| a == b && ta == tb);
        record.assert(Assertion::holds("uniform trace identical to classic KD", identical));
    } else {
        record.note("operator is adaptive; the classic-trace comparison applies to uniform operators only");
    }
    record.tables.push(trace_table("trace", &mean));
    Ok(())
}

/// Largest coordinate gap between the analytic gradient and central
/// differences at a random student.
pub fn gradient_check(table: &TargetTable, ridge: f64, sampler: &mut Sampler) -> Result<f64> {
    let mut theta = StudentParams::zeros(table.n_inputs, table.vocab, ridge);
    for row in &mut theta.logits {
        for z in row.iter_mut() {
            *z = sampler.uniform_range(-2.0, 2.0);
        }
    }
    let grad = table.gradient(&theta)?;
    let mut worst: f64 = 0.0;
    for x in 0..table.n_inputs {
        for i in 0..table.vocab {
            let mut up = theta.clone();
            up.logits[x][i] += FD_STEP;
            let mut down = theta.clone();
            down.logits[x][i] -= FD_STEP;
            let fd = (table.loss(&up)? - table.loss(&down)?) / (2.0 * FD_STEP);
            worst = worst.max((fd - grad[x][i]).abs());
        }
    }
    Ok(worst)
}

fn rate(
    config: &ExperimentConfig,
    seeds: usize,
    kl_tol: f64,
    slope_range: [f64; 2],
    fd_tol: f64,
    slope_agreement: f64,
    record: &mut RunRecord,
) -> Result<()> {
    let g = config.operator()?;
    let uniform = UnifiedWeightOperator::uniform(config.bounds)?;
    let mut fit_rows = Table::long("rate_fit");
    let mut slopes = Vec::new();
    for (label, op) in [("configured", &g), ("uniform", &uniform)] {
        let table = TargetTable::build(op, &config.world)?;
        let traces = (0..seeds)
            .into_par_iter()
            .map(|s| sgd_train(&seeded(&config.trainer, s), op, &config.world).map(|(_, t)| t))
            .collect::<Result<Vec<_>>>()?;
        let mean = TrainTrace::average(&traces)?;
        let reference = table.solve(config.trainer.ridge, REFERENCE_TOL)?;
        let fit = fit_convergence_rate(&mean, reference.loss)?;
        let kl_floor = table.mean_kl(&reference.params)?;
        let terminal = mean.last().expect("nonempty trace");
        fit_rows.push_long(label, "l_star", reference.loss);
        fit_rows.push_long(label, "slope", fit.slope);
        fit_rows.push_long(label, "constant", fit.constant);
        fit_rows.push_long(label, "r_squared", fit.r_squared);
        fit_rows.push_long(label, "terminal_mean_kl", terminal.mean_kl);
        fit_rows.push_long(label, "kl_at_optimum", kl_floor);
        if label == "configured" {
            record.assert(
                Assertion::at_most("terminal mean KL", kl_tol, terminal.mean_kl)
                    .with_detail(format!("mean KL at the regularized optimum is {kl_floor:.4e}")),
            );
            record.assert(Assertion::within("log-log rate slope", slope_range[0], slope_range[1], fit.slope));
            record.note(format!(
                "fitted C = {:.4e}, R^2 = {:.4}, L* = {:.10}",
                fit.constant, fit.r_squared, reference.loss
            ));
            let mut sampler = Sampler::substream(config.seed(), 3);
            record.assert(Assertion::at_most(
                "gradient vs finite differences",
                fd_tol,
                gradient_check(&table, config.trainer.ridge, &mut sampler)?,
            ));
            record.tables.push(trace_table("trace", &mean));
        } else {
            record.tables.push(trace_table("trace_uniform", &mean));
        }
        slopes.push(fit.slope);
    }
    record.assert(Assertion::at_most("slope gap to uniform operator", slope_agreement, (slopes[0] - slopes[1]).abs()));
    record.tables.push(fit_rows);
    Ok(())
}

fn fixed_point(
    config: &ExperimentConfig,
    update: WeightUpdateConfig,
    starts: usize,
    pairs: usize,
    agree_tol: f64,
    constant_control: bool,
    record: &mut RunRecord,
) -> Result<()> {
    let world = &config.world;
    let bounds = &config.bounds;
    let mut dynamics = Table::long("dynamics");
    let estimate = estimate_contraction(&update, world, bounds, pairs, &mut Sampler::substream(config.seed(), 5))?;
    dynamics.push_long("fixed_point", "beta", update.beta);
    dynamics.push_long("fixed_point", "rho_hat", estimate.rho_hat);
    dynamics.push_long("fixed_point", "pairs", estimate.pairs as f64);
    record.assert(Assertion::less_than("contraction estimate", 1.0, estimate.rho_hat));

    let mut sampler = Sampler::substream(config.seed(), 6);
    let mut initial = vec![WeightVector::uniform(world.k())];
    for _ in 1..starts {
        initial.push(random_feasible(world.k(), bounds, &mut sampler)?);
    }
    let traces =
        initial.par_iter().map(|w0| iterate_to_fixed_point(w0, &update, world, bounds)).collect::<Result<Vec<_>>>()?;
    let reference = traces[0].fixed_point().clone();
    let mut spread: f64 = 0.0;
    let mut envelope: f64 = 0.0;
    let mut path = Table::new("fixed_point_trace", &["start", "iteration", "distance"]);
    for (s, trace) in traces.iter().enumerate() {
        spread = spread.max(trace.fixed_point().max_abs_diff(&reference));
        envelope = envelope.max(trace.envelope_ratio(estimate.rho_hat));
        let label = format!("start_{s}");
        dynamics.push_long(&label, "iterations", trace.iterations() as f64);
        dynamics.push_long(&label, "rho_trajectory", trace.rho_hat);
        for (k, w) in trace.fixed_point().0.iter().enumerate() {
            dynamics.push_long(&label, format!("w_star_{k}"), *w);
        }
        for (n, d) in trace.distances.iter().enumerate() {
            path.push(vec![s.into(), (n + 1).into(), (*d).into()]);
        }
    }
    record.assert(Assertion::holds("all starts converged", traces.iter().all(|t| t.converged)));
    record.assert(Assertion::at_most("geometric envelope ratio", 1.0 + ENVELOPE_SLACK, envelope));
    record.assert(Assertion::at_most("fixed point agreement across starts", agree_tol, spread));

    if constant_control {
        let control = constant_target_world(world);
        let est = estimate_contraction(&update, &control, bounds, pairs, &mut Sampler::substream(config.seed(), 8))?;
        dynamics.push_long("constant_control", "rho_hat", est.rho_hat);
        record.assert(Assertion::close(
            "constant-target contraction = 1 - beta",
            1.0 - update.beta,
            est.rho_hat,
            CONTROL_TOL,
        ));
    }
    record.tables.push(dynamics);
    record.tables.push(path);
    Ok(())
}

fn perturbation(
    config: &ExperimentConfig,
    deltas: &[f64],
    min_r_squared: f64,
    max_spread: f64,
    record: &mut RunRecord,
) -> Result<()> {
    let g = config.operator()?;
    let mut sampler = Sampler::substream(config.seed(), 9);
    let report = perturbation_experiment(&g, &config.world, deltas, &config.trainer, &mut sampler)?;
    let mut dynamics = Table::long("dynamics");
    for row in &report.rows {
        let label = format!("delta={:e}", row.delta);
        dynamics.push_long(&label, "delta", row.delta);
        dynamics.push_long(&label, "distance", row.distance);
    }
    let fit = report.fit.ok_or_else(|| Error::InvalidParameter("no nonzero delta to fit".into()))?;
    dynamics.push_long("fit", "slope", fit.slope);
    dynamics.push_long("fit", "r_squared", fit.r_squared);
    dynamics.push_long("fit", "ratio_spread", report.ratio_spread);
    record.assert(Assertion::at_least("origin fit R^2", min_r_squared, fit.r_squared));
    record.assert(Assertion::at_most("max/min distance per delta", max_spread, report.ratio_spread));
    record.assert(Assertion::holds("distance nondecreasing in delta", report.monotone));
    record.note(format!("distance ~= {:.4e} * delta", fit.slope));
    record.tables.push(dynamics);
    Ok(())
}

fn variance(
    config: &ExperimentConfig,
    samples: usize,
    families: &[Family],
    uniform_tol: f64,
    record: &mut RunRecord,
) -> Result<()> {
    let world = &config.world;
    let theta = StudentParams::zeros(world.inputs.len(), world.vocab_size(), config.trainer.ridge);
    let params = config.raw.operators.params;
    let mut all: Vec<Family> = families.to_vec();
    if !all.contains(&Family::Uniform) {
        all.push(Family::Uniform);
    }
    let reports = all
        .par_iter()
        .map(|&family| {
            let g = UnifiedWeightOperator::same_family(family, params, config.bounds)?;
            let mut sampler = Sampler::substream(config.seed(), 10);
            gradient_variance_ratio(&g, world, &theta, samples, &mut sampler)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dynamics = Table::long("dynamics");
    for (family, r) in all.iter().zip(&reports) {
        let label = family.name();
        dynamics.push_long(label, "variance", r.measured);
        dynamics.push_long(label, "base_variance", r.base);
        dynamics.push_long(label, "w_min", r.w_min);
        dynamics.push_long(label, "w_max", r.w_max);
        dynamics.push_long(label, "bound", r.bound);
        if *family == Family::Uniform {
            record.assert(Assertion::close("uniform variance / base", 1.0, r.ratio(), uniform_tol));
        } else {
            record.assert(Assertion::at_most(format!("{label} variance <= (w_max/w_min)^2 base"), r.bound, r.measured));
        }
    }
    record.tables.push(dynamics);
    Ok(())
}

struct SafetyOptions {
    threshold: Threshold,
    dual_step: f64,
    max_dual_iters: usize,
    kkt_tol: f64,
    inactive_check: bool,
    preservation_check: bool,
}

fn safety_config(config: &ExperimentConfig, s_min: f64) -> Result<SafetyConfig> {
    let labels = config.labels.clone().ok_or_else(|| Error::InvalidParameter("safety runs need labels".into()))?;
    SafetyConfig::new(s_min, labels)
}

fn safety(config: &ExperimentConfig, opts: SafetyOptions, record: &mut RunRecord) -> Result<()> {
    let g = config.operator()?;
    let world = &config.world;
    let probe = safety_config(config, 1.0)?;
    let table = TargetTable::build(&g, world)?;
    let free = table.solve(config.trainer.ridge, 1e-8)?;
    let s_free = SafetyProblem::new(&g, world, &probe)?.safety(&free.params)?;
    let s_max = max_achievable_safety(world, &probe)?;
    let s_min = match opts.threshold {
        Threshold::Absolute(s) => s,
        Threshold::Fraction(f) => s_free + f * (s_max - s_free),
    };
    let mut summary = Table::long("safety");
    summary.push_long("threshold", "unconstrained_safety", s_free);
    summary.push_long("threshold", "max_safety", s_max);
    summary.push_long("threshold", "s_min", s_min);

    let mut active = safety_config(config, s_min)?;
    active.dual_step = opts.dual_step;
    active.max_dual_iters = opts.max_dual_iters;
    let solution = dual_ascent_solve(&g, world, &active, &config.trainer)?;
    let kkt = kkt_residuals(&solution.theta, solution.mu, &g, world, &active)?;
    for (name, value) in [
        ("stationarity", kkt.stationarity),
        ("slackness", kkt.slackness),
        ("primal violation", kkt.primal),
        ("dual violation", kkt.dual),
    ] {
        summary.push_long("kkt", name, value);
        record.assert(Assertion::at_most(format!("KKT {name}"), opts.kkt_tol, value));
    }
    summary.push_long("dual", "mu_star", solution.mu);
    summary.push_long("dual", "iterations", solution.history.len() as f64);
    let mut history = Table::new("dual_history", &["iteration", "mu", "kd_loss", "safety", "primal", "slackness"]);
    for h in &solution.history {
        history.push(vec![
            h.iteration.into(),
            h.mu.into(),
            h.kd_loss.into(),
            h.safety.into(),
            h.primal.into(),
            h.slackness.into(),
        ]);
    }
    record
        .note(format!("S_min = {s_min:.6} (unconstrained {s_free:.6}, supremum {s_max:.6}), mu* = {:.6}", solution.mu));

    if opts.inactive_check {
        let mut inactive = safety_config(config, 0.9 * s_free)?;
        inactive.dual_step = opts.dual_step;
        inactive.max_dual_iters = opts.max_dual_iters;
        let loose = dual_ascent_solve(&g, world, &inactive, &config.trainer)?;
        summary.push_long("inactive", "mu_star", loose.mu);
        record.assert(Assertion::close("inactive threshold multiplier", 0.0, loose.mu, 0.0));
    }
    if opts.preservation_check {
        let report = jensen_preservation_check(&g, world, &active, &config.trainer)?;
        summary.push_long("preservation", "student_safety", report.student_safety);
        summary.push_long("preservation", "ensemble_safety", report.ensemble_safety);
        record.assert(Assertion::at_least(
            "critical-context student safety >= ensemble - 1e-3",
            report.ensemble_safety - crate::safety::preservation::PRESERVATION_TOL,
            report.student_safety,
        ));
    }
    record.tables.push(summary);
    record.tables.push(history);
    Ok(())
}

fn pareto(config: &ExperimentConfig, grid: &[f64], record: &mut RunRecord) -> Result<()> {
    let g = config.operator()?;
    let safety = safety_config(config, 1.0)?;
    let points = pareto_sweep(&g, &config.world, &safety, &config.trainer, grid)?;
    let mut table = Table::new("pareto", &["mu", "kd_loss", "safety"]);
    for p in &points {
        table.push(vec![p.mu.into(), p.kd_loss.into(), p.safety.into()]);
    }
    let worst =
        |f: fn(&crate::safety::ParetoPoint) -> f64| points.windows(2).map(|w| f(&w[0]) - f(&w[1])).fold(0.0, f64::max);
    record.assert(Assertion::at_most("safety decrease along mu", SWEEP_TOL, worst(|p| p.safety)));
    record.assert(Assertion::at_most("kd loss decrease along mu", SWEEP_TOL, worst(|p| p.kd_loss)));
    let duplicate_gap = points
        .windows(2)
        .filter(|w| (w[1].safety - w[0].safety).abs() <= 1e-12)
        .map(|w| (w[1].kd_loss - w[0].kd_loss).abs())
        .fold(0.0, f64::max);
    record.assert(Assertion::at_most("equal safety implies equal loss", 1e-6, duplicate_gap));
    if grid.first() == Some(&0.0) {
        let free = TargetTable::build(&g, &config.world)?.solve(config.trainer.ridge, 1e-8)?;
        record.assert(Assertion::close("mu = 0 endpoint is the KD optimum", free.loss, points[0].kd_loss, 1e-9));
    }
    record.note(format!("{} multipliers on [{}, {}]", grid.len(), grid[0], grid[grid.len() - 1]));
    record.tables.push(table);
    Ok(())
}

struct AppendixExpectations<'a> {
    entropies: &'a [f64],
    weights: &'a [f64],
    uniform: &'a [f64],
    adaptive: &'a [f64],
    weight_tol: f64,
    uniform_tol: f64,
    adaptive_tol: f64,
    min_gain: f64,
}

/// The two-teacher worked example: inverse-entropy weights from the given
/// entropies and the uniform and adaptive ensembles of the first cell.
pub fn appendix_ensembles(world: &World, entropies: &[f64], bounds: &WeightBounds) -> Result<AppendixResult> {
    let dists = world.bank.dists(0, 0);
    let weights = inverse_entropy_weights(entropies, bounds)?;
    let uniform = weighted_ensemble(&WeightVector::uniform(dists.len()), dists)?.probs().to_vec();
    let adaptive = weighted_ensemble(&weights, dists)?.probs().to_vec();
    let measured: Vec<f64> = dists.iter().map(|d| d.entropy()).collect();
    let measured_weights = inverse_entropy_weights(&measured, bounds)?;
    Ok(AppendixResult { weights, uniform, adaptive, measured_entropies: measured, measured_weights })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppendixResult {
    pub weights: WeightVector,
    pub uniform: Vec<f64>,
    pub adaptive: Vec<f64>,
    pub measured_entropies: Vec<f64>,
    pub measured_weights: WeightVector,
}

fn appendix_a(config: &ExperimentConfig, expect: AppendixExpectations<'_>, record: &mut RunRecord) -> Result<()> {
    let r = appendix_ensembles(&config.world, expect.entropies, &config.bounds)?;
    let mut table = Table::new("appendix_a", &["quantity", "index", "value"]);
    let mut push = |q: &str, values: &[f64]| {
        for (i, v) in values.iter().enumerate() {
            table.push(vec![Cell::from(q), i.into(), (*v).into()]);
        }
    };
    push("weight", &r.weights.0);
    push("q_uniform", &r.uniform);
    push("q_adaptive", &r.adaptive);
    push("measured_entropy", &r.measured_entropies);
    push("weight_from_measured_entropy", &r.measured_weights.0);

    for (i, (&e, &m)) in expect.weights.iter().zip(&r.weights.0).enumerate() {
        record.assert(Assertion::close(format!("weight[{i}]"), e, m, expect.weight_tol));
    }
    for (i, (&e, &m)) in expect.uniform.iter().zip(&r.uniform).enumerate() {
        record.assert(Assertion::close(format!("q_uniform[{i}]"), e, m, expect.uniform_tol));
    }
    for (i, (&e, &m)) in expect.adaptive.iter().zip(&r.adaptive).enumerate() {
        record.assert(Assertion::close(format!("q_adaptive[{i}]"), e, m, expect.adaptive_tol));
    }
    let gain = r.adaptive[0] - r.uniform[0];
    record.assert(Assertion::at_least("q_adaptive[0] - q_uniform[0]", expect.min_gain, gain));
    record.note(format!(
        "relative gain on token 0: {:+.1}%; entropies of the listed teachers are ({}), giving weights ({})",
        100.0 * gain / r.uniform[0],
        r.measured_entropies.iter().map(|h| format!("{h:.4}")).collect::<Vec<_>>().join(", "),
        r.measured_weights.0.iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>().join(", "),
    ));
    record.tables.push(table);
    Ok(())
}
