//! Experiment configuration: JSON schema, validation and world construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::composition::UnifiedWeightOperator;
use crate::distill::TrainerConfig;
use crate::domain::{
    validate_distribution, ContextSpec, InputSpec, SyntheticWorld, TaskSpec, TeacherBank, TokenDistribution,
    VocabularySpec, WeightBounds, World,
};
use crate::error::{ConfigIssue, Error, Result};
use crate::operators::{Family, FamilyParams};
use crate::safety::SafetyConfig;

/// Every experiment kind, in CLI listing order.
pub const KINDS: [&str; 9] =
    ["conformance", "train", "rate", "fixed_point", "perturbation", "variance", "safety", "pareto", "appendix_a"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; not part of the config hash.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub world: WorldSource,
    #[serde(default)]
    pub operators: OperatorSelection,
    #[serde(default)]
    pub bounds: BoundsSpec,
    #[serde(default)]
    pub trainer: TrainerSpec,
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldSource {
    Synthetic(SyntheticWorld),
    Explicit(ExplicitWorld),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitWorld {
    pub vocab: VocabularySpec,
    pub inputs: Vec<InputSpec>,
    pub tasks: Vec<TaskEntry>,
    pub contexts: Vec<ContextEntry>,
    pub teachers: Vec<TeacherEntry>,
    pub table: Vec<TableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub id: u32,
    pub importance: f64,
    pub inputs: Vec<TaskInput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInput {
    pub input: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextEntry {
    pub id: u32,
    #[serde(default)]
    pub features: Vec<f64>,
    pub measure_weight: f64,
    #[serde(default)]
    pub safety_critical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherEntry {
    pub id: u32,
    #[serde(default)]
    pub safety: Option<f64>,
    #[serde(default)]
    pub perf: Vec<PerfEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerfEntry {
    pub task: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub input: u32,
    pub context: u32,
    pub teacher: u32,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorSelection {
    pub token: Family,
    pub task: Family,
    pub context: Family,
    pub params: FamilyParams,
}

impl Default for OperatorSelection {
    fn default() -> Self {
        Self {
            token: Family::Uniform,
            task: Family::Uniform,
            context: Family::Uniform,
            params: FamilyParams::default(),
        }
    }
}

impl OperatorSelection {
    pub fn build(&self, bounds: WeightBounds) -> Result<UnifiedWeightOperator> {
        UnifiedWeightOperator::from_families(self.token, self.task, self.context, self.params, bounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSpec {
    pub w_min: f64,
    pub w_max: f64,
    pub lipschitz: f64,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        Self { w_min: 0.05, w_max: 0.9, lipschitz: 10.0 }
    }
}

/// Trainer settings; the seed comes from the top level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSpec {
    pub eta0: f64,
    pub steps: usize,
    pub ridge: f64,
    pub eval_every: usize,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        let d = TrainerConfig::default();
        Self { eta0: d.eta0, steps: d.steps, ridge: d.ridge, eval_every: d.eval_every }
    }
}

impl TrainerSpec {
    pub fn with_seed(&self, seed: u64) -> TrainerConfig {
        TrainerConfig { eta0: self.eta0, steps: self.steps, ridge: self.ridge, seed, eval_every: self.eval_every }
    }
}

/// Ground-truth safety labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpec {
    /// Drawn from the safety set on safety-critical contexts, from the whole
    /// vocabulary elsewhere.
    Synthetic {
        seed: u64,
    },
    Explicit(Vec<LabelEntry>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub input: u32,
    pub context: u32,
    pub token: usize,
}

fn d_samples() -> usize {
    1000
}
fn d_variance_samples() -> usize {
    10_000
}
fn d_one() -> usize {
    1
}
fn d_ten() -> usize {
    10
}
fn d_true() -> bool {
    true
}
fn d_kl_tol() -> f64 {
    1e-3
}
fn d_slope() -> [f64; 2] {
    [-1.3, -0.7]
}
fn d_fd_tol() -> f64 {
    1e-6
}
fn d_slope_agreement() -> f64 {
    0.2
}
fn d_beta() -> f64 {
    0.3
}
fn d_pairs() -> usize {
    200
}
fn d_max_iters() -> usize {
    10_000
}
fn d_fp_tol() -> f64 {
    1e-10
}
fn d_agree_tol() -> f64 {
    1e-6
}
fn d_deltas() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1]
}
fn d_r2() -> f64 {
    0.95
}
fn d_spread() -> f64 {
    3.0
}
fn d_adaptive() -> Vec<Family> {
    vec![Family::InverseEntropy, Family::FamilyA, Family::FamilyB, Family::FamilyC]
}
fn d_uniform_tol() -> f64 {
    0.02
}
fn d_dual_step() -> f64 {
    SafetyConfig::DEFAULT_DUAL_STEP
}
fn d_dual_iters() -> usize {
    SafetyConfig::DEFAULT_MAX_DUAL_ITERS
}
fn d_kkt_tol() -> f64 {
    1e-3
}
fn d_mu_max() -> f64 {
    5.0
}
fn d_points() -> usize {
    20
}
fn d_entropies() -> Vec<f64> {
    vec![0.68, 1.52]
}
fn d_expected_weights() -> Vec<f64> {
    vec![0.69, 0.31]
}
fn d_expected_uniform() -> Vec<f64> {
    vec![0.6, 0.25, 0.15]
}
fn d_expected_adaptive() -> Vec<f64> {
    vec![0.676, 0.212, 0.112]
}
fn d_weight_tol() -> f64 {
    0.005
}
fn d_uniform_exact() -> f64 {
    1e-12
}
fn d_gain() -> f64 {
    0.07
}

/// Threshold of a safety run: absolute, or a fraction of the way from the
/// unconstrained optimum's safety to the supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Absolute(f64),
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Conformance {
        #[serde(default = "d_samples")]
        samples: usize,
        /// Defaults to every built-in family.
        #[serde(default)]
        families: Option<Vec<Family>>,
    },
    Train {
        #[serde(default = "d_one")]
        seeds: usize,
    },
    Rate {
        #[serde(default = "d_ten")]
        seeds: usize,
        #[serde(default = "d_kl_tol")]
        kl_tol: f64,
        #[serde(default = "d_slope")]
        slope_range: [f64; 2],
        #[serde(default = "d_fd_tol")]
        fd_tol: f64,
        /// Fitted slopes of the configured and the uniform operator agree within this.
        #[serde(default = "d_slope_agreement")]
        slope_agreement: f64,
    },
    FixedPoint {
        #[serde(default = "d_beta")]
        beta: f64,
        #[serde(default = "d_ten")]
        starts: usize,
        #[serde(default = "d_pairs")]
        pairs: usize,
        #[serde(default = "d_max_iters")]
        max_iters: usize,
        #[serde(default = "d_fp_tol")]
        tol: f64,
        #[serde(default = "d_agree_tol")]
        agree_tol: f64,
        #[serde(default = "d_true")]
        constant_control: bool,
    },
    Perturbation {
        #[serde(default = "d_deltas")]
        deltas: Vec<f64>,
        #[serde(default = "d_r2")]
        min_r_squared: f64,
        #[serde(default = "d_spread")]
        max_spread: f64,
    },
    Variance {
        #[serde(default = "d_variance_samples")]
        samples: usize,
        #[serde(default = "d_adaptive")]
        families: Vec<Family>,
        #[serde(default = "d_uniform_tol")]
        uniform_tol: f64,
    },
    Safety {
        threshold: Threshold,
        labels: LabelSpec,
        #[serde(default = "d_dual_step")]
        dual_step: f64,
        #[serde(default = "d_dual_iters")]
        max_dual_iters: usize,
        #[serde(default = "d_kkt_tol")]
        kkt_tol: f64,
        /// Also solve with a threshold below the unconstrained safety.
        #[serde(default = "d_true")]
        inactive_check: bool,
        #[serde(default = "d_true")]
        preservation_check: bool,
    },
    Pareto {
        labels: LabelSpec,
        /// Defaults to `points` evenly spaced values on `[0, mu_max]`.
        #[serde(default)]
        mu_grid: Option<Vec<f64>>,
        #[serde(default = "d_mu_max")]
        mu_max: f64,
        #[serde(default = "d_points")]
        points: usize,
    },
    AppendixA {
        #[serde(default = "d_entropies")]
        entropies: Vec<f64>,
        #[serde(default = "d_expected_weights")]
        expected_weights: Vec<f64>,
        #[serde(default = "d_expected_uniform")]
        expected_uniform: Vec<f64>,
        #[serde(default = "d_expected_adaptive")]
        expected_adaptive: Vec<f64>,
        #[serde(default = "d_weight_tol")]
        weight_tol: f64,
        #[serde(default = "d_uniform_exact")]
        uniform_tol: f64,
        #[serde(default = "d_weight_tol")]
        adaptive_tol: f64,
        #[serde(default = "d_gain")]
        min_gain: f64,
    },
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::Conformance { .. } => "conformance",
            ExperimentSpec::Train { .. } => "train",
            ExperimentSpec::Rate { .. } => "rate",
            ExperimentSpec::FixedPoint { .. } => "fixed_point",
            ExperimentSpec::Perturbation { .. } => "perturbation",
            ExperimentSpec::Variance { .. } => "variance",
            ExperimentSpec::Safety { .. } => "safety",
            ExperimentSpec::Pareto { .. } => "pareto",
            ExperimentSpec::AppendixA { .. } => "appendix_a",
        }
    }

    fn labels(&self) -> Option<&LabelSpec> {
        match self {
            ExperimentSpec::Safety { labels, .. } | ExperimentSpec::Pareto { labels, .. } => Some(labels),
            _ => None,
        }
    }
}

/// A validated config with its world built and its references resolved.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub world: World,
    pub bounds: WeightBounds,
    pub trainer: TrainerConfig,
    /// Resolved `(input index, context index) -> token` labels, when the
    /// experiment needs them.
    pub labels: Option<BTreeMap<(usize, usize), usize>>,
    pub hash: String,
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        self.raw.experiment.kind()
    }

    pub fn seed(&self) -> u64 {
        self.raw.seed
    }

    pub fn operator(&self) -> Result<UnifiedWeightOperator> {
        self.raw.operators.build(self.bounds)
    }
}

/// Reads and validates a config file, optionally overriding its seed.
pub fn parse_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![ConfigIssue::Parse(format!("{}: {e}", path.display()))]))?;
    parse_config_str(&text, seed)
}

pub fn parse_config_str(text: &str, seed: Option<u64>) -> Result<ExperimentConfig> {
    let parse_issue = |e: serde_json::Error| Error::Config(vec![ConfigIssue::Parse(e.to_string())]);
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(parse_issue)?;
    if let (Some(seed), Some(obj)) = (seed, value.as_object_mut()) {
        obj.insert("seed".into(), seed.into());
    }
    let raw: RawConfig = serde_json::from_value(value.clone()).map_err(parse_issue)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("output");
    }
    let hash = config_hash(&value);
    validate(raw, hash)
}

/// SHA-256 of the canonical (sorted-key, compact) JSON form.
pub fn config_hash(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("JSON values always serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn validate(raw: RawConfig, hash: String) -> Result<ExperimentConfig> {
    let mut issues = Vec::new();
    let world = match &raw.world {
        WorldSource::Synthetic(spec) => {
            spec.generate().map_err(|e| issues.push(ConfigIssue::Invalid(format!("synthetic world: {e}")))).ok()
        }
        WorldSource::Explicit(explicit) => build_explicit(explicit, &mut issues),
    };

    let bounds = WeightBounds { w_min: raw.bounds.w_min, w_max: raw.bounds.w_max, lipschitz: raw.bounds.lipschitz };
    if let Err(e) = bounds.validate() {
        issues.push(ConfigIssue::Invalid(e.to_string()));
    }
    if let Some(world) = &world {
        if bounds.check_feasible(world.k()).is_err() {
            issues.push(ConfigIssue::InfeasibleBounds { k: world.k(), w_min: bounds.w_min, w_max: bounds.w_max });
        }
    }

    let ops = &raw.operators;
    for (scale, family) in [("token", ops.token), ("task", ops.task), ("context", ops.context)] {
        if family == Family::Custom {
            issues.push(ConfigIssue::Invalid(format!("{scale} operator: 'custom' is not a built-in family")));
        }
    }
    if let Err(e) = ops.params.validate() {
        issues.push(ConfigIssue::Invalid(e.to_string()));
    }
    let trainer = raw.trainer.with_seed(raw.seed);
    if let Err(e) = trainer.validate() {
        issues.push(ConfigIssue::Invalid(format!("trainer: {e}")));
    }
    validate_experiment(&raw.experiment, &mut issues);

    let labels = match (raw.experiment.labels(), &world) {
        (Some(spec), Some(world)) => resolve_labels(spec, world, &mut issues),
        _ => None,
    };

    match world {
        Some(world) if issues.is_empty() => Ok(ExperimentConfig { raw, world, bounds, trainer, labels, hash }),
        _ => Err(Error::Config(issues)),
    }
}

fn validate_experiment(spec: &ExperimentSpec, issues: &mut Vec<ConfigIssue>) {
    let mut bad = |msg: String| issues.push(ConfigIssue::Invalid(format!("experiment: {msg}")));
    match spec {
        ExperimentSpec::Conformance { samples, families } => {
            if *samples == 0 {
                bad("samples must be positive".into());
            }
            if families.as_ref().is_some_and(|f| f.is_empty() || f.contains(&Family::Custom)) {
                bad("families must be a nonempty list of built-in families".into());
            }
        }
        ExperimentSpec::Train { seeds } | ExperimentSpec::Rate { seeds, .. } if *seeds == 0 => {
            bad("seeds must be positive".into());
        }
        ExperimentSpec::FixedPoint { beta, starts, max_iters, tol, .. } => {
            if !(*beta > 0.0 && *beta <= 1.0) {
                bad(format!("beta must lie in (0, 1], got {beta}"));
            }
            if *starts == 0 || *max_iters == 0 || !(*tol > 0.0) {
                bad("starts, max_iters and tol must be positive".into());
            }
        }
        ExperimentSpec::Perturbation { deltas, .. } => {
            if deltas.is_empty() || deltas.iter().any(|d| !(*d >= 0.0)) {
                bad("deltas must be a nonempty list of nonnegative values".into());
            }
        }
        ExperimentSpec::Variance { samples, families, .. } => {
            if *samples < 100 {
                bad("variance needs at least 100 samples".into());
            }
            if families.contains(&Family::Custom) {
                bad("'custom' is not a built-in family".into());
            }
        }
        ExperimentSpec::Safety { threshold, dual_step, max_dual_iters, .. } => {
            match threshold {
                Threshold::Absolute(s) if !(*s > 0.0 && *s <= 1.0) => {
                    bad(format!("threshold must lie in (0, 1], got {s}"))
                }
                Threshold::Fraction(f) if !(0.0..1.0).contains(f) => {
                    bad(format!("threshold fraction must lie in [0, 1), got {f}"))
                }
                _ => {}
            }
            if !(*dual_step > 0.0) || *max_dual_iters == 0 {
                bad("dual_step and max_dual_iters must be positive".into());
            }
        }
        ExperimentSpec::Pareto { mu_grid, mu_max, points, .. } => match mu_grid {
            Some(grid)
                if grid.is_empty() || grid.iter().any(|m| !(*m >= 0.0)) || grid.windows(2).any(|w| w[1] < w[0]) =>
            {
                bad("mu_grid must be nonempty, nonnegative and ascending".into());
            }
            None if !(*mu_max > 0.0) || *points < 2 => bad("need mu_max > 0 and at least 2 points".into()),
            _ => {}
        },
        ExperimentSpec::AppendixA { entropies, expected_weights, .. }
            if entropies.len() != expected_weights.len() || entropies.iter().any(|h| !(*h > 0.0)) =>
        {
            bad("entropies must be positive and match expected_weights in length".into());
        }
        _ => {}
    }
}

fn resolve_labels(
    spec: &LabelSpec,
    world: &World,
    issues: &mut Vec<ConfigIssue>,
) -> Option<BTreeMap<(usize, usize), usize>> {
    match spec {
        LabelSpec::Synthetic { seed } => Some(SafetyConfig::synthetic_labels(world, *seed)),
        LabelSpec::Explicit(entries) => {
            let before = issues.len();
            let mut labels = BTreeMap::new();
            for e in entries {
                let x = world.input_index(e.input);
                let c = world.context_index(e.context);
                if x.is_none() {
                    issues.push(ConfigIssue::UnresolvedReference(format!("label references input id {}", e.input)));
                }
                if c.is_none() {
                    issues.push(ConfigIssue::UnresolvedReference(format!("label references context id {}", e.context)));
                }
                if e.token >= world.vocab_size() {
                    issues.push(ConfigIssue::Invalid(format!("label token {} outside the vocabulary", e.token)));
                }
                if let (Some(x), Some(c)) = (x, c) {
                    labels.insert((x, c), e.token);
                }
            }
            (issues.len() == before).then_some(labels)
        }
    }
}

fn duplicates<I: IntoIterator<Item = u32>>(what: &str, ids: I, issues: &mut Vec<ConfigIssue>) {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            issues.push(ConfigIssue::Invalid(format!("duplicate {what} id {id}")));
        }
    }
}

fn unresolved(issues: &mut Vec<ConfigIssue>, what: &str, id: u32, site: String) {
    issues.push(ConfigIssue::UnresolvedReference(format!("{site} references missing {what} id {id}")));
}

fn build_explicit(spec: &ExplicitWorld, issues: &mut Vec<ConfigIssue>) -> Option<World> {
    let before = issues.len();
    duplicates("input", spec.inputs.iter().map(|x| x.id), issues);
    duplicates("task", spec.tasks.iter().map(|t| t.id), issues);
    duplicates("context", spec.contexts.iter().map(|c| c.id), issues);
    duplicates("teacher", spec.teachers.iter().map(|t| t.id), issues);

    let input_ix: BTreeMap<u32, usize> = spec.inputs.iter().enumerate().map(|(i, x)| (x.id, i)).collect();
    let task_ix: BTreeMap<u32, usize> = spec.tasks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    let ctx_ix: BTreeMap<u32, usize> = spec.contexts.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let teacher_ix: BTreeMap<u32, usize> = spec.teachers.iter().enumerate().map(|(i, t)| (t.id, i)).collect();

    let vocab = match VocabularySpec::new(spec.vocab.size, spec.vocab.safety_set.clone()) {
        Ok(v) => Some(v),
        Err(e) => {
            issues.push(ConfigIssue::Invalid(format!("vocabulary: {e}")));
            None
        }
    };

    let mut tasks = Vec::new();
    for t in &spec.tasks {
        let mut inputs = Vec::new();
        for ti in &t.inputs {
            match input_ix.get(&ti.input) {
                Some(&x) => inputs.push((x, ti.weight)),
                None => unresolved(issues, "input", ti.input, format!("task {}", t.id)),
            }
        }
        tasks.push(TaskSpec { id: t.id, inputs, importance: t.importance });
    }

    let k = spec.teachers.len();
    let mut perf = vec![vec![None; spec.tasks.len()]; k];
    let mut safety = vec![None; k];
    for (i, teacher) in spec.teachers.iter().enumerate() {
        safety[i] = teacher.safety;
        for p in &teacher.perf {
            match task_ix.get(&p.task) {
                Some(&t) => perf[i][t] = Some(p.score),
                None => unresolved(issues, "task", p.task, format!("teacher {} performance score", teacher.id)),
            }
        }
    }

    let n_ctx = spec.contexts.len();
    let mut cells: Vec<Vec<Option<TokenDistribution>>> = vec![vec![None; k]; spec.inputs.len() * n_ctx];
    for entry in &spec.table {
        let site = format!("table entry (input {}, context {}, teacher {})", entry.input, entry.context, entry.teacher);
        let x = input_ix.get(&entry.input).copied();
        let c = ctx_ix.get(&entry.context).copied();
        let j = teacher_ix.get(&entry.teacher).copied();
        if x.is_none() {
            unresolved(issues, "input", entry.input, site.clone());
        }
        if c.is_none() {
            unresolved(issues, "context", entry.context, site.clone());
        }
        if j.is_none() {
            unresolved(issues, "teacher", entry.teacher, site.clone());
        }
        let (Some(x), Some(c), Some(j)) = (x, c, j) else { continue };
        if entry.probs.len() != spec.vocab.size {
            issues.push(ConfigIssue::Invalid(format!(
                "{site}: {} probabilities for vocabulary of size {}",
                entry.probs.len(),
                spec.vocab.size
            )));
            continue;
        }
        if let Err(e) = validate_distribution(&entry.probs) {
            issues.push(ConfigIssue::Invalid(format!("{site}: {e}")));
            continue;
        }
        let slot = &mut cells[x * n_ctx + c][j];
        if slot.is_some() {
            issues.push(ConfigIssue::Invalid(format!("{site} is given twice")));
        }
        *slot = TokenDistribution::new(entry.probs.clone()).ok();
    }
    for (cell, dists) in cells.iter().enumerate() {
        for (j, d) in dists.iter().enumerate() {
            if d.is_none() {
                issues.push(ConfigIssue::Invalid(format!(
                    "table has no entry for input {}, context {}, teacher {}",
                    spec.inputs[cell / n_ctx].id,
                    spec.contexts[cell % n_ctx].id,
                    spec.teachers[j].id
                )));
            }
        }
    }
    if issues.len() > before {
        return None;
    }

    let table = cells.into_iter().map(|c| c.into_iter().map(|d| d.expect("checked above")).collect()).collect();
    let contexts = spec
        .contexts
        .iter()
        .map(|c| ContextSpec {
            id: c.id,
            features: c.features.clone(),
            measure_weight: c.measure_weight,
            safety_critical: c.safety_critical,
        })
        .collect();
    let built = TeacherBank::new(k, n_ctx, table, perf, safety)
        .and_then(|bank| World::new(vocab.expect("checked above"), spec.inputs.clone(), tasks, contexts, bank));
    match built {
        Ok(world) => Some(world),
        Err(e) => {
            issues.push(ConfigIssue::Invalid(e.to_string()));
            None
        }
    }
}
