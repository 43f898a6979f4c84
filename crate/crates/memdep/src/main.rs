//! `memdep` command line. Every subcommand prints its effective configuration
//! as `#`-prefixed JSON before doing any work.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use memdep::experiments::{self, ExperimentError, ExperimentSpec, PerturbMode, Timed, CURVE_CSV_HEADER};
use memdep::{api, checkpoint, heatmap, io};
use memdep_core::dataset;
use memdep_core::envgym::{TaskKind, TaskParams};
use memdep_core::evaluator::{self, RunReport};
use memdep_core::model::{ModelConfig, Placement};
use memdep_core::profile::{Method, Profile};
use memdep_core::trainer::{self, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "memdep", version, about = "Attention-supervised imitation learning on memory gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations.
    Gen(GenArgs),
    /// Train one model on a dataset file.
    Train(TrainArgs),
    /// Roll out a checkpoint.
    Eval(EvalArgs),
    /// Success rate against the fraction of annotated trajectories.
    AblateAnnotations(AblateAnnotationsArgs),
    /// Success rate against Gaussian noise on pair endpoints.
    AblatePerturb(AblatePerturbArgs),
    /// Success rate for every memory-loss placement plus no loss.
    AblatePlacement(ExperimentArgs),
    /// Export attention heatmaps of one trajectory.
    Heatmap(HeatmapArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    task: TaskKind,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = experiments::DEFAULT_DATA_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    /// Task parameter override, `name=value`; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON object merged over the effective `{model, train}` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    placement: Option<Placement>,
    /// Checkpoint path; the learning curve goes next to it as `.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Held-out share for the test action accuracy column.
    #[arg(long, default_value_t = 0.0)]
    test_fraction: f64,
    #[arg(long = "set", value_name = "PATH=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Defaults to the task stored in the checkpoint.
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    trials: Option<usize>,
    /// Evaluation seeds; one success rate per seed.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Also append the report row to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    task: TaskKind,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long, default_value = "attentiontuner")]
    method: Method,
    /// Training seeds; defaults to the profile's count starting at 0.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Spec override, `path=value` with a JSON value, e.g. `train.epochs=60`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    sets: Vec<String>,
    /// Directory for `report.csv` and `report.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateAnnotationsArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.1,0.5,1")]
    fractions: Vec<f64>,
}

#[derive(Args)]
struct AblatePerturbArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4")]
    sigmas: Vec<f64>,
    #[arg(long, default_value = "p-only")]
    mode: PerturbMode,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    id: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Static UI directory served at `/`.
    #[arg(long)]
    assets: Option<PathBuf>,
}

/// Splits failures into the two non-zero exit codes.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

impl From<io::FormatError> for CliError {
    fn from(e: io::FormatError) -> Self {
        match e {
            io::FormatError::Io(_) => CliError::Runtime(e.into()),
            _ => invalid(e),
        }
    }
}

impl From<checkpoint::CheckpointError> for CliError {
    fn from(e: checkpoint::CheckpointError) -> Self {
        match e {
            checkpoint::CheckpointError::Io(_) => CliError::Runtime(e.into()),
            _ => invalid(e),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Invalid(_) | ExperimentError::Dataset(_) => invalid(e),
            _ => CliError::Runtime(e.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::AblateAnnotations(a) => {
            let spec = experiment_spec(&a.exp)?;
            check_fractions(&a.fractions)?;
            print_header(&serde_json::json!({ "spec": spec, "fractions": a.fractions }));
            let table = experiments::ablate_annotations(&spec, &a.fractions)?;
            emit_table(&table, a.exp.out.as_deref())
        }
        Command::AblatePerturb(a) => {
            let spec = experiment_spec(&a.exp)?;
            if a.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(invalid("sigmas must be finite and non-negative"));
            }
            print_header(&serde_json::json!({ "spec": spec, "sigmas": a.sigmas, "mode": a.mode }));
            let table = experiments::ablate_perturb(&spec, &a.sigmas, a.mode)?;
            emit_table(&table, a.exp.out.as_deref())
        }
        Command::AblatePlacement(a) => {
            let spec = experiment_spec(&a)?;
            print_header(&serde_json::json!({ "spec": spec }));
            let table = experiments::ablate_placement(&spec)?;
            emit_table(&table, a.out.as_deref())
        }
        Command::Heatmap(a) => heatmap_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_checkpoint(path: &Path) -> Result<(checkpoint::Header, memdep_core::model::Model), CliError> {
    checkpoint::load(path).map_err(|e| match CliError::from(e) {
        CliError::Runtime(e) => CliError::Runtime(e.context(format!("reading {}", path.display()))),
        other => other,
    })
}

fn load_dataset(path: &Path) -> Result<dataset::Dataset, CliError> {
    io::load(path).map_err(|e| match CliError::from(e) {
        CliError::Runtime(e) => CliError::Runtime(e.context(format!("reading {}", path.display()))),
        CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
    })
}

fn print_header(value: &impl Serialize) {
    let text = serde_json::to_string_pretty(value).expect("config serializes");
    let mut out = std::io::stdout().lock();
    writeln!(out, "# effective config").ok();
    for line in text.lines() {
        writeln!(out, "# {line}").ok();
    }
}

/// Applies `a.b.c=value` to a JSON tree; the value is parsed as JSON and
/// falls back to a string.
fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| invalid(format!("`{assignment}` is not PATH=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| invalid(format!("`{path}` does not name a setting")))?;
        let slot = obj.get_mut(*key).ok_or_else(|| invalid(format!("unknown setting `{path}`")))?;
        if i + 1 == keys.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Ok(())
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn patched<T: Serialize + for<'de> Deserialize<'de>>(value: &T, sets: &[String]) -> Result<T, CliError> {
    let mut tree = serde_json::to_value(value).expect("settings serialize");
    for s in sets {
        apply_set(&mut tree, s)?;
    }
    serde_json::from_value(tree).map_err(invalid)
}

fn experiment_spec(a: &ExperimentArgs) -> Result<ExperimentSpec, CliError> {
    let mut spec = ExperimentSpec::new(a.task, a.profile, a.method);
    if let Some(seeds) = &a.seeds {
        spec.seeds = seeds.clone();
    }
    let spec: ExperimentSpec = patched(&spec, &a.sets)?;
    spec.validate()?;
    Ok(spec)
}

fn check_fractions(fs: &[f64]) -> Result<(), CliError> {
    if fs.iter().all(|f| (0.0..=1.0).contains(f)) {
        Ok(())
    } else {
        Err(invalid("fractions must lie in [0, 1]"))
    }
}

fn emit_table(table: &experiments::AblationTable, out: Option<&Path>) -> Result<(), CliError> {
    print!("{}", table.to_text());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        io::write_atomic(&dir.join("report.csv"), table.to_csv().as_bytes())?;
        io::write_atomic(&dir.join("report.txt"), table.to_text().as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GenConfig<'a> {
    params: &'a TaskParams,
    n: usize,
    seed: u64,
    out: &'a Path,
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    let params = a.profile.task_params(a.task);
    let mut tree = serde_json::to_value(params).expect("params serialize");
    // Task parameters are tagged by task; overrides address the inner fields.
    let inner = tree.as_object_mut().and_then(|o| o.values_mut().next()).ok_or_else(|| invalid("bad params"))?;
    for p in &a.params {
        apply_set(inner, p)?;
    }
    let params: TaskParams = serde_json::from_value(tree).map_err(invalid)?;
    params.validate().map_err(invalid)?;
    let n = a.n.unwrap_or_else(|| a.profile.demonstrations(a.task));
    print_header(&GenConfig { params: &params, n, seed: a.seed, out: &a.out });
    let ds = dataset::generate(&params, n, a.seed).map_err(invalid)?;
    io::save(&ds, &a.out)?;
    let steps: usize = ds.trajectories.iter().map(|t| t.len()).sum();
    println!("wrote {} trajectories, {} steps, to {}", ds.len(), steps, a.out.display());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainSettings {
    model: ModelConfig,
    train: TrainConfig,
    test_fraction: f64,
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data)?;
    let task = ds.manifest.params;
    let mut s = TrainSettings {
        model: a.profile.model_config(),
        train: a.profile.train_config(task.kind(), Method::AttentionTuner, a.seed),
        test_fraction: a.test_fraction,
    };
    if let Some(l) = a.lambda {
        s.train.lambda = l;
    }
    if let Some(e) = a.epochs {
        s.train.epochs = e;
    }
    if let Some(p) = a.placement {
        s.model.placement = p;
    }
    if let Some(path) = &a.config {
        let patch: Value = serde_json::from_str(&fs::read_to_string(path)?).map_err(invalid)?;
        let mut tree = serde_json::to_value(&s).expect("settings serialize");
        merge(&mut tree, patch);
        s = serde_json::from_value(tree).map_err(invalid)?;
    }
    let s = patched(&s, &a.sets)?;
    s.model.validate().map_err(invalid)?;
    s.train.validate().map_err(invalid)?;
    if task.horizon() > s.model.max_steps {
        return Err(invalid("task horizon exceeds the model context"));
    }
    print_header(&serde_json::json!({ "data": a.data, "task": task, "settings": s, "out": a.out }));

    let (train_set, test_set) = dataset::split(&ds.trajectories, s.test_fraction, s.train.seed).map_err(invalid)?;
    let curve_path = a.out.with_extension("csv");
    let mut curve = fs::File::create(&curve_path)?;
    writeln!(curve, "{CURVE_CSV_HEADER}")?;
    let mut write_err = None;
    let mut observer = Timed(Instant::now(), |r: &trainer::EpochRecord| {
        let row = experiments::curve_row(r);
        println!("{row}");
        if let Err(e) = writeln!(curve, "{row}").and_then(|_| curve.flush()) {
            write_err.get_or_insert(e);
        }
    });
    let outcome = trainer::train(&train_set, &test_set, &s.model, &s.train, &mut observer)
        .map_err(|e| CliError::Runtime(e.into()))?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let header = checkpoint::Header { model: s.model, task: Some(task), train: Some(s.train) };
    checkpoint::save(&a.out, &header, &outcome.model)?;
    println!("saved {} and {}", a.out.display(), curve_path.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let (header, model) = load_checkpoint(&a.ckpt)?;
    let params = match (a.task, header.task) {
        (Some(t), Some(p)) if p.kind() != t => {
            return Err(invalid(format!("checkpoint was trained on {}, not {t}", p.kind())));
        }
        (_, Some(p)) => p,
        (Some(t), None) => a.profile.task_params(t),
        (None, None) => return Err(invalid("checkpoint has no task; pass --task")),
    };
    let trials = a.trials.unwrap_or_else(|| a.profile.eval_trials());
    print_header(&serde_json::json!({ "ckpt": a.ckpt, "task": params, "trials": trials, "seeds": a.seeds }));
    let mut rates = Vec::with_capacity(a.seeds.len());
    for &seed in &a.seeds {
        let rate = evaluator::rollout(&model, &params, trials, seed).map_err(|e| match e {
            evaluator::EvalError::ContextOverflow { .. } | evaluator::EvalError::NoTrials => invalid(e),
            _ => CliError::Runtime(e.into()),
        })?;
        rates.push(rate);
    }
    let label = a.ckpt.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let report = RunReport::new(params.kind(), label, a.seeds.clone(), rates, trials);
    let row = report_csv_row(&report);
    println!("{REPORT_CSV_HEADER}\n{row}");
    println!("{}", report_text(&report));
    if let Some(path) = a.csv {
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
        if fresh {
            writeln!(f, "{REPORT_CSV_HEADER}")?;
        }
        writeln!(f, "{row}")?;
    }
    Ok(())
}

const REPORT_CSV_HEADER: &str = "task,label,seeds,trials,mean,median,half_width_90,rates";

fn report_csv_row(r: &RunReport) -> String {
    let join = |v: Vec<String>| v.join(";");
    format!(
        "{},{},{},{},{},{},{},{}",
        r.task,
        r.label,
        join(r.seeds.iter().map(u64::to_string).collect()),
        r.trials,
        r.mean,
        r.median,
        r.half_width,
        join(r.rates.iter().map(f64::to_string).collect()),
    )
}

fn report_text(r: &RunReport) -> String {
    format!(
        "{} {}: {:.1} ± {:.1}% (median {:.1}%, {} seeds × {} trials)",
        r.task,
        r.label,
        100.0 * r.mean,
        100.0 * r.half_width,
        100.0 * r.median,
        r.seeds.len(),
        r.trials,
    )
}

fn heatmap_cmd(a: HeatmapArgs) -> Result<(), CliError> {
    let (_, model) = load_checkpoint(&a.ckpt)?;
    let ds = load_dataset(&a.data)?;
    let t = ds.get(a.id).ok_or_else(|| invalid(format!("no trajectory {}", a.id)))?;
    print_header(&serde_json::json!({ "ckpt": a.ckpt, "data": a.data, "id": a.id, "out": a.out }));
    fs::create_dir_all(&a.out)?;
    let files = heatmap::export(&model, t, &a.out).map_err(|e| CliError::Runtime(e.into()))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let addr = SocketAddr::new(a.host, a.port);
    print_header(&serde_json::json!({ "data": a.data, "addr": addr.to_string(), "assets": a.assets }));
    let state = api::AppState::open(a.data)?;
    let rt = tokio::runtime::Runtime::new()?;
    println!("listening on http://{addr}");
    rt.block_on(api::serve(state, a.assets, addr))?;
    Ok(())
}
