//! Command implementations behind the `mobicache` binary. Each command takes
//! parsed arguments, does its work through the core library and returns the
//! text meant for standard output; files named by `--out` are written here.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use mobicache::aca::{aca, hua};
use mobicache::allocation::{failure_probability_exact, failure_probability_mc};
use mobicache::model::{build_zipf_mandelbrot, estimate_from_trace, read_trace_csv, uniform_request_model, write_trace_csv};
use mobicache::oca::{oca_allocate, BnbOptions};
use mobicache::synth::{grid_mobility, sample_trace};
use mobicache::verify::{run_verification, VerifyOptions};
use mobicache::{
    Allocation, AllocationArtifact, Catalog, EvalReport, HelperSet, Instance, MobilityModel, ModelArtifact,
    DEFAULT_ENUMERATION_CAP,
};

pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_TOO_LARGE: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mobicache::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("verification failed\n{0}")]
    VerificationFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(mobicache::Error::InstanceTooLarge { .. }) => EXIT_TOO_LARGE,
            CliError::VerificationFailed(_) => EXIT_VERIFY_FAILED,
            _ => EXIT_INVALID_INPUT,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mobicache", version, about = "Coded cache allocation for mobile users across small-cell helpers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a mobility model from a contact trace CSV.
    Estimate(EstimateArgs),
    /// Compute an allocation for the instance described by a config.
    Allocate(AllocateArgs),
    /// Evaluate the failure probability of a stored allocation.
    Evaluate(EvaluateArgs),
    /// Sweep cache size or popularity skew and report failure probabilities as CSV.
    Sweep(SweepArgs),
    /// Run the oracle self-check suite.
    Verify(VerifyArgs),
    /// Sample a synthetic contact trace from a grid mobility model.
    GenTrace(GenTraceArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub slot_duration: f64,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub algorithm: Algorithm,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub allocation: PathBuf,
    /// Model JSON replacing the config's mobility source.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use Monte Carlo with this many samples instead of the configured method.
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub locality: f64,
    #[arg(long)]
    pub users: usize,
    #[arg(long, default_value_t = 5)]
    pub slots: usize,
    #[arg(long, default_value_t = 100.0)]
    pub slot_duration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Hua,
    Aca,
    Oca,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Hua => "hua",
            Algorithm::Aca => "aca",
            Algorithm::Oca => "oca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogSpec {
    pub num_files: usize,
    pub file_size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HelperSpec {
    /// Every helper gets the same slot budget and a cache holding
    /// `cache_fraction` of the whole catalog.
    Uniform { slot_budget_bytes: u64, cache_fraction: f64 },
    PerHelper { slot_budgets: Vec<u64>, cache_capacities: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub zipf_shape: f64,
    pub zipf_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MobilitySource {
    Trace { path: PathBuf },
    Model { path: PathBuf },
    Synthetic { seed: u64, locality: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum EvaluationSpec {
    #[default]
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    CacheFraction,
    ZipfShape,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::CacheFraction => "cache_fraction",
            SweepAxis::ZipfShape => "zipf_shape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

fn all_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Hua, Algorithm::Aca, Algorithm::Oca]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    #[serde(alias = "d")]
    pub deadline: usize,
    pub slot_duration_s: f64,
    pub catalog: CatalogSpec,
    pub helpers: HelperSpec,
    pub requests: RequestSpec,
    pub mobility: MobilitySource,
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// One point of the parameter space: the config with an optional override.
#[derive(Debug, Clone, Copy, Default)]
pub struct Point {
    pub cache_fraction: Option<f64>,
    pub zipf_shape: Option<f64>,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(path)?).map_err(|source| CliError::Json { path: path.to_path_buf(), source })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts serialize");
    s.push('\n');
    s
}

fn validate_fraction(f: f64) -> CliResult<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("cache_fraction must lie in (0, 1], got {f}")))
    }
}

impl ExperimentConfig {
    /// Reads a config; relative paths inside it are resolved against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        match &mut cfg.mobility {
            MobilitySource::Trace { path } | MobilitySource::Model { path } if path.is_relative() => {
                *path = base.join(&*path);
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.n == 0 || self.deadline == 0 || self.catalog.num_files == 0 {
            return Err(CliError::Config("n, deadline and num_files must be positive".into()));
        }
        if !(self.slot_duration_s > 0.0) {
            return Err(CliError::Config("slot_duration_s must be positive".into()));
        }
        if let HelperSpec::Uniform { cache_fraction, .. } = self.helpers {
            validate_fraction(cache_fraction)?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.axis == SweepAxis::CacheFraction {
                if !matches!(self.helpers, HelperSpec::Uniform { .. }) {
                    return Err(CliError::Config("a cache_fraction sweep needs uniform helpers".into()));
                }
                sweep.values.iter().try_for_each(|&f| validate_fraction(f))?;
            }
        }
        Ok(())
    }

    pub fn load_model(&self) -> CliResult<MobilityModel> {
        let model = match &self.mobility {
            MobilitySource::Trace { path } => {
                let file = fs::File::open(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
                estimate_from_trace(&read_trace_csv(file)?, self.slot_duration_s, self.n)?
            }
            MobilitySource::Model { path } => read_json::<ModelArtifact>(path)?.to_model()?,
            MobilitySource::Synthetic { seed, locality } => grid_mobility(self.n, *locality, *seed)?,
        };
        if model.n() != self.n {
            return Err(CliError::Config(format!(
                "config says n = {} but the mobility model has {} helpers",
                self.n,
                model.n()
            )));
        }
        Ok(model)
    }

    pub fn instance(&self, model: &MobilityModel, point: Point) -> CliResult<Instance> {
        let catalog = Catalog::uniform(self.catalog.num_files, self.catalog.file_size_bytes)?;
        let helpers = match &self.helpers {
            HelperSpec::Uniform { slot_budget_bytes, cache_fraction } => {
                let fraction = point.cache_fraction.unwrap_or(*cache_fraction);
                validate_fraction(fraction)?;
                let cache = (fraction * catalog.total_bytes() as f64).round() as u64;
                HelperSet::uniform(self.n, cache, *slot_budget_bytes)?
            }
            HelperSpec::PerHelper { slot_budgets, cache_capacities } => {
                HelperSet::new(cache_capacities.clone(), slot_budgets.clone())?
            }
        };
        let shape = point.zipf_shape.unwrap_or(self.requests.zipf_shape);
        let popularity = build_zipf_mandelbrot(self.catalog.num_files, shape, self.requests.zipf_shift)?;
        let requests = uniform_request_model(&popularity, self.n)?;
        Ok(Instance::new(model.clone(), requests, helpers, catalog, self.deadline)?)
    }
}

pub fn evaluate_with(alloc: &Allocation, instance: &Instance, spec: &EvaluationSpec) -> CliResult<EvalReport> {
    Ok(match spec {
        EvaluationSpec::Exact => failure_probability_exact(alloc, instance, DEFAULT_ENUMERATION_CAP)?,
        EvaluationSpec::MonteCarlo { samples, seed } => failure_probability_mc(alloc, instance, *samples, *seed)?,
    })
}

/// Runs one algorithm and evaluates the result. For the exact solver the
/// returned estimate is its certified objective and the gap is reported.
pub fn run_algorithm(
    algorithm: Algorithm,
    instance: &Instance,
    evaluation: &EvaluationSpec,
) -> CliResult<AllocationArtifact> {
    let (alloc, estimate, gap) = match algorithm {
        Algorithm::Hua | Algorithm::Aca => {
            let alloc = if algorithm == Algorithm::Hua { hua(instance)? } else { aca(instance)? };
            let p = evaluate_with(&alloc, instance, evaluation)?.p_fail;
            (alloc, p, None)
        }
        Algorithm::Oca => {
            let res = oca_allocate(instance, &BnbOptions::default())?;
            (res.allocation, res.objective, Some(res.gap))
        }
    };
    Ok(AllocationArtifact::new(&alloc, algorithm.tag(), estimate, gap))
}

fn emit(out: &Option<PathBuf>, contents: &str) -> CliResult<String> {
    match out {
        Some(path) => {
            write(path, contents)?;
            Ok(String::new())
        }
        None => Ok(contents.to_string()),
    }
}

pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<String> {
    let file = fs::File::open(&args.trace).map_err(|source| CliError::Io { path: args.trace.clone(), source })?;
    let trace = read_trace_csv(file)?;
    let model = estimate_from_trace(&trace, args.slot_duration, args.n)?;
    emit(&args.out, &to_json(&ModelArtifact::from_model(&model, args.slot_duration)))
}

pub fn cmd_allocate(args: &AllocateArgs) -> CliResult<String> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let instance = cfg.instance(&cfg.load_model()?, Point::default())?;
    let artifact = run_algorithm(args.algorithm, &instance, &cfg.evaluation)?;
    emit(&args.out, &to_json(&artifact))
}

fn evaluation_override(cfg: &ExperimentConfig, samples: Option<u64>, seed: u64) -> EvaluationSpec {
    match samples {
        Some(samples) => EvaluationSpec::MonteCarlo { samples, seed },
        None => cfg.evaluation.clone(),
    }
}

/// Prints a one-line summary; the JSON report goes to `--out` when given,
/// otherwise it follows the summary.
pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<String> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(path) = &args.model {
        cfg.mobility = MobilitySource::Model { path: path.clone() };
    }
    let instance = cfg.instance(&cfg.load_model()?, Point::default())?;
    let artifact: AllocationArtifact = read_json(&args.allocation)?;
    let alloc = artifact.to_allocation()?;
    let report = evaluate_with(&alloc, &instance, &evaluation_override(&cfg, args.samples, args.seed))?;
    let summary = format!(
        "p_fail={} method={} samples={} ci_halfwidth_99={}\n",
        report.p_fail,
        serde_json::to_value(report.method).expect("method serializes").as_str().unwrap_or_default(),
        report.samples,
        report.ci_halfwidth_99
    );
    let json = to_json(&report);
    match &args.out {
        Some(path) => {
            write(path, &json)?;
            Ok(summary)
        }
        None => Ok(summary + &json),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_name: String,
    pub axis_value: f64,
    pub algorithm: String,
    pub p_fail: f64,
    pub ci_halfwidth: f64,
    pub method: String,
}

/// All rows of a sweep, in axis order and then config algorithm order.
pub fn sweep_rows(cfg: &ExperimentConfig, evaluation: &EvaluationSpec) -> CliResult<Vec<SweepRow>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no sweep section".into()))?;
    let model = cfg.load_model()?;
    let mut rows = Vec::new();
    for &value in &sweep.values {
        let point = match sweep.axis {
            SweepAxis::CacheFraction => Point { cache_fraction: Some(value), ..Point::default() },
            SweepAxis::ZipfShape => Point { zipf_shape: Some(value), ..Point::default() },
        };
        let instance = cfg.instance(&model, point)?;
        for &algorithm in &cfg.algorithms {
            let artifact = run_algorithm(algorithm, &instance, evaluation)?;
            let report = evaluate_with(&artifact.to_allocation()?, &instance, evaluation)?;
            rows.push(SweepRow {
                axis_name: sweep.axis.name().to_string(),
                axis_value: value,
                algorithm: algorithm.tag().to_string(),
                p_fail: report.p_fail,
                ci_halfwidth: report.ci_halfwidth_99,
                method: serde_json::to_value(report.method)
                    .expect("method serializes")
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
            });
        }
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> CliResult<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in rows {
        wtr.serialize(row).map_err(mobicache::Error::from)?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<String> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let rows = sweep_rows(&cfg, &evaluation_override(&cfg, args.samples, args.seed))?;
    emit(&args.out, &rows_to_csv(&rows)?)
}

/// Prints the report; the JSON form goes to `--out`. A failed check is
/// reported by [`run`] as [`CliError::VerificationFailed`] after the report is written.
pub fn cmd_verify(args: &VerifyArgs) -> CliResult<(String, bool)> {
    let report = run_verification(&VerifyOptions {
        seed: args.seed,
        trials: args.trials,
        ..VerifyOptions::default()
    })?;
    if let Some(path) = &args.out {
        write(path, &to_json(&report))?;
    }
    Ok((format!("{report}\n"), report.passed()))
}

pub fn cmd_gen_trace(args: &GenTraceArgs) -> CliResult<String> {
    let model = grid_mobility(args.n, args.locality, args.seed)?;
    let trace = sample_trace(&model, args.users, args.slots, args.slot_duration, args.seed)?;
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf)?;
    emit(&args.out, &String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Dispatches a parsed command line. On success returns what to print.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Allocate(a) => cmd_allocate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => {
            let (text, passed) = cmd_verify(a)?;
            if passed {
                Ok(text)
            } else {
                Err(CliError::VerificationFailed(text))
            }
        }
        Command::GenTrace(a) => cmd_gen_trace(a),
    }
}
