//! Train-and-evaluate pipelines behind the CLI subcommands and the
//! acceptance suite. Each seed trains a fresh model on one shared dataset and
//! is evaluated on one shared set of episodes, so conditions are paired.

use std::fmt::Write as _;
use std::time::Instant;

use memdep_core::dataset::{self, Dataset};
use memdep_core::envgym::{TaskKind, TaskParams};
use memdep_core::evaluator::{self, RunReport};
use memdep_core::model::{ModelConfig, Placement};
use memdep_core::profile::{Method, Profile};
use memdep_core::trainer::{self, EpochRecord, TrainConfig, TrainObserver, TrainOutcome};
use serde::{Deserialize, Serialize};

pub const DEFAULT_DATA_SEED: u64 = 1;
pub const DEFAULT_EVAL_SEED: u64 = 0x5EED_0000_0001;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Train(#[from] trainer::TrainError),
    #[error(transparent)]
    Eval(#[from] evaluator::EvalError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

/// Fully materialized experiment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub task: TaskKind,
    pub profile: Profile,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub env: TaskParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub demos: usize,
    pub data_seed: u64,
    pub eval_trials: usize,
    pub eval_seed: u64,
}

impl ExperimentSpec {
    /// Profile defaults for `task` and `method`, seeds `0..profile.seeds()`.
    pub fn new(task: TaskKind, profile: Profile, method: Method) -> Self {
        Self {
            task,
            profile,
            method,
            seeds: (0..profile.seeds() as u64).collect(),
            env: profile.task_params(task),
            model: profile.model_config(),
            train: profile.train_config(task, method, 0),
            demos: profile.demonstrations(task),
            data_seed: DEFAULT_DATA_SEED,
            eval_trials: profile.eval_trials(),
            eval_seed: DEFAULT_EVAL_SEED,
        }
    }

    /// Vanilla means `λ = 0`; both directions are enforced.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Invalid(m.into()));
        if self.env.kind() != self.task {
            return bad("environment parameters belong to another task");
        }
        if (self.method == Method::Vanilla) != (self.train.lambda == 0.0) {
            return bad("vanilla runs need lambda = 0 and attentiontuner runs lambda > 0");
        }
        if self.seeds.is_empty() || self.demos == 0 || self.eval_trials == 0 {
            return bad("seeds, demos and eval trials must be non-empty");
        }
        self.env.validate().map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        self.model.validate().map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        self.train.validate()?;
        if self.env.horizon() > self.model.max_steps {
            return bad("task horizon exceeds the model context");
        }
        Ok(())
    }

    pub fn with_method(&self, method: Method) -> Self {
        let mut s = self.clone();
        s.method = method;
        s.train.lambda = match method {
            Method::Vanilla => 0.0,
            Method::AttentionTuner => memdep_core::profile::LAMBDA,
        };
        s
    }

    pub fn dataset(&self) -> Result<Dataset, ExperimentError> {
        Ok(dataset::generate(&self.env, self.demos, self.data_seed)?)
    }

    /// Pretty JSON of every setting, printed before a run.
    pub fn header(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Result of one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub success_rate: f64,
    pub outcome: TrainOutcome,
}

struct Clock(Instant);

impl TrainObserver for Clock {
    fn elapsed_seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Wraps an observer with wall-clock timing.
pub struct Timed<F: FnMut(&EpochRecord)>(pub Instant, pub F);

impl<F: FnMut(&EpochRecord)> TrainObserver for Timed<F> {
    fn elapsed_seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, r: &EpochRecord) {
        (self.1)(r)
    }
}

pub fn train_seed(
    spec: &ExperimentSpec,
    data: &Dataset,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<SeedRun, ExperimentError> {
    let config = TrainConfig { seed, ..spec.train.clone() };
    let outcome = trainer::train(&data.trajectories, &[], &spec.model, &config, observer)?;
    let success_rate = evaluator::rollout(&outcome.model, &spec.env, spec.eval_trials, spec.eval_seed)?;
    Ok(SeedRun { seed, success_rate, outcome })
}

/// Trains and evaluates every seed of `spec` on `data`.
pub fn run(spec: &ExperimentSpec, data: &Dataset, label: &str) -> Result<(RunReport, Vec<SeedRun>), ExperimentError> {
    spec.validate()?;
    // Seeds are independent; one thread each, results in seed order.
    let runs = std::thread::scope(|scope| {
        let handles: Vec<_> = spec
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || train_seed(spec, data, seed, &mut Clock(Instant::now()))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed thread panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    let rates = runs.iter().map(|r| r.success_rate).collect();
    Ok((RunReport::new(spec.task, label.to_string(), spec.seeds.clone(), rates, spec.eval_trials), runs))
}

/// One row per (condition, seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub task: TaskKind,
    pub condition: String,
    pub seed: u64,
    pub success_rate: f64,
}

pub const ABLATION_CSV_HEADER: &str = "task,condition,seed,success_rate";

#[derive(Clone, Debug, Default)]
pub struct AblationTable {
    pub reports: Vec<RunReport>,
}

impl AblationTable {
    pub fn rows(&self) -> Vec<AblationRow> {
        self.reports
            .iter()
            .flat_map(|r| {
                r.seeds.iter().zip(&r.rates).map(|(&seed, &success_rate)| AblationRow {
                    task: r.task,
                    condition: r.label.clone(),
                    seed,
                    success_rate,
                })
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{ABLATION_CSV_HEADER}\n");
        for r in self.rows() {
            writeln!(out, "{},{},{},{}", r.task, r.condition, r.seed, r.success_rate).expect("string write");
        }
        out
    }

    /// Aligned text: one line per condition with mean, 90% half-width and
    /// median, in percent.
    pub fn to_text(&self) -> String {
        let width = self.reports.iter().map(|r| r.label.len()).max().unwrap_or(9).max(9);
        let mut out = format!("{:<width$}  {:>14}  {:>7}\n", "condition", "mean ± 90% CI", "median");
        for r in &self.reports {
            let cell = format!("{:.1} ± {:.1}", 100.0 * r.mean, 100.0 * r.half_width);
            writeln!(out, "{:<width$}  {:>14}  {:>7.1}", r.label, cell, 100.0 * r.median).expect("string write");
        }
        out
    }
}

/// Condition label for an annotation fraction, in percent.
pub fn fraction_label(f: f64) -> String {
    format!("{}%", 100.0 * f)
}

/// Annotation-fraction ablation; fraction 0 is the vanilla column.
pub fn ablate_annotations(spec: &ExperimentSpec, fractions: &[f64]) -> Result<AblationTable, ExperimentError> {
    let base = spec.dataset()?;
    let mut table = AblationTable::default();
    for &f in fractions {
        let data = dataset::subsample_annotations(&base, f, spec.data_seed)?;
        table.reports.push(run(spec, &data, &fraction_label(f))?.0);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// Only the recalled step `p` moves.
    POnly,
    Both,
}

impl std::str::FromStr for PerturbMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "p-only" => Ok(Self::POnly),
            "both" => Ok(Self::Both),
            _ => Err(format!("unknown perturbation mode `{s}` (p-only or both)")),
        }
    }
}

pub fn ablate_perturb(spec: &ExperimentSpec, sigmas: &[f64], mode: PerturbMode) -> Result<AblationTable, ExperimentError> {
    let base = spec.dataset()?;
    let mut table = AblationTable::default();
    for &sigma in sigmas {
        let sq = if mode == PerturbMode::Both { sigma } else { 0.0 };
        let data = dataset::perturb_pairs(&base, sigma, sq, spec.data_seed)?;
        data.validate()?;
        table.reports.push(run(spec, &data, &format!("sigma={sigma}"))?.0);
    }
    Ok(table)
}

/// The no-loss baseline followed by the six placements.
pub fn ablate_placement(spec: &ExperimentSpec) -> Result<AblationTable, ExperimentError> {
    let data = spec.dataset()?;
    let mut table = AblationTable::default();
    table.reports.push(run(&spec.with_method(Method::Vanilla), &data, "none")?.0);
    let tuned = spec.with_method(Method::AttentionTuner);
    for placement in Placement::all() {
        let mut s = tuned.clone();
        s.model.placement = placement;
        table.reports.push(run(&s, &data, &placement.to_string())?.0);
    }
    Ok(table)
}

/// Learning-curve CSV header and rows.
pub const CURVE_CSV_HEADER: &str = "epoch,il_loss,mem_loss,total_loss,test_action_accuracy,wall_seconds";

pub fn curve_row(r: &EpochRecord) -> String {
    let acc = r.test_action_accuracy.map_or(String::new(), |a| a.to_string());
    format!("{},{},{},{},{},{}", r.epoch, r.il_loss, r.mem_loss, r.total_loss, acc, r.wall_seconds)
}
