//! `robot`: robust optimal transport from the command line.
//!
//! Every subcommand prints a JSON document on stdout. Exit status is 0 on
//! success, 2 for invalid input and 3 when a solver or algorithm fails.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use robot_core::RobotError;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
    /// Printed instead of the generic error document when present.
    pub report: Option<serde_json::Value>,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
            report: None,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<RobotError> for CliError {
    fn from(e: RobotError) -> Self {
        let code = match e {
            RobotError::SolverFailure { .. } | RobotError::AlgorithmFailure(_) => 3,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
            report: None,
        }
    }
}

#[derive(Parser)]
#[command(name = "robot", version, about = "Robust Wasserstein distances, estimators and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Robust Wasserstein distance between two sample files.
    Dist(DistArgs),
    /// Draw a (possibly contaminated) sample from a generative model.
    Sample(SampleArgs),
    /// Minimum expected robust Wasserstein estimate of one parameter.
    Estimate(EstimateArgs),
    /// Choose the trimming level from concentration thresholds.
    SelectLambda(SelectLambdaArgs),
    /// Concentration thresholds for clean and contaminated samples.
    Conc(ConcArgs),
    /// Linear regression with iterative outlier removal.
    Regress(RegressArgs),
    /// Robust domain adaptation with kernel ridge regression.
    Adapt(AdaptArgs),
    /// Predict with a model written by `adapt`.
    Predict(PredictArgs),
    /// Run an experiment manifest.
    Run {
        /// Manifest JSON file.
        manifest: PathBuf,
    },
    /// Check a manifest without running it.
    Validate {
        /// Manifest JSON file.
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Abs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F64,
    F32,
}

#[derive(Args)]
struct DistArgs {
    /// Source sample CSV (coordinate columns, optional trailing `weight`).
    #[arg(long)]
    source: PathBuf,
    /// Target sample CSV.
    #[arg(long)]
    target: PathBuf,
    /// Trimming level; `inf` gives the plain Wasserstein-1 distance.
    #[arg(long)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    /// Write the transport plan as CSV (row, col, mass).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    LognormalSum,
    AlphaStable,
    Gaussian,
    Uniform,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Log-normal sum: log-location.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    gamma: f64,
    /// Log-normal sum: log-scale.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Log-normal sum: number of summands.
    #[arg(long = "L", default_value_t = 10)]
    l: usize,
    /// Stable: index in (0, 2].
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Stable: skewness in [-1, 1].
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta: f64,
    /// Stable: scale.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Stable: location.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    loc: f64,
    /// Gaussian: mean.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mean: f64,
    /// Gaussian: standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sd: f64,
    /// Uniform: lower end.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    a: f64,
    /// Uniform: upper end.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    b: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outlier share; the last round(epsilon * n) values are outliers.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    eta: f64,
    /// location-shift, point-mass or stable-shift.
    #[arg(long, default_value = "location-shift")]
    mechanism: String,
    /// Output CSV with a single column `x`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// One-column sample CSV.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Parameter to estimate; defaults to the family's location.
    #[arg(long)]
    param: Option<String>,
    /// Trimming level; `inf` gives the untrimmed estimator.
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Search interval for golden-section search.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    bounds: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw fresh model noise at every objective evaluation.
    #[arg(long)]
    fresh_noise: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectLambdaArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, default_value_t = 0.001)]
    iota: f64,
    #[arg(long, default_value_t = 1.0)]
    grid_min: f64,
    #[arg(long, default_value_t = 6f64.exp())]
    grid_max: f64,
    #[arg(long, default_value_t = 60)]
    grid_n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConcArgs {
    #[arg(long)]
    n: usize,
    /// Outlier share; |O| = round(tau * n).
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Scale proxy given directly.
    #[arg(long, conflicts_with = "sigma_from")]
    sigma: Option<f64>,
    /// Estimate the scale proxy from this sample CSV.
    #[arg(long)]
    sigma_from: Option<PathBuf>,
}

#[derive(Args)]
struct RegressArgs {
    /// CSV with columns `x` and `y`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    /// Source CSV: covariate columns followed by a `y` column.
    #[arg(long)]
    source: PathBuf,
    /// Target CSV: covariate columns; a `y` column, if present, is only used
    /// to report the target error.
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Weight of the covariate distance in the joint cost.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Kernel bandwidth; median heuristic when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    ridge: f64,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    /// Fitted model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration diagnostics CSV.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Covariate CSV; a `y` column is ignored.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV with a `prediction` column.
    #[arg(long)]
    out: PathBuf,
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("ROBOT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::invalid(format!("ROBOT_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(CliError::invalid("ROBOT_THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::invalid(e.to_string()))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<serde_json::Value, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Dist(a) => commands::dist(a),
        Command::Sample(a) => commands::sample(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::SelectLambda(a) => commands::select_lambda(a),
        Command::Conc(a) => commands::conc(a),
        Command::Regress(a) => commands::regress(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Predict(a) => commands::predict(a),
        Command::Run { manifest } => manifest::run(&manifest::load(&manifest)?),
        Command::Validate { manifest } => commands::validate(&manifest),
    }
}

/// Writes the report; a closed pipe (`robot ... | head`) is not an error.
fn emit(value: &serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(value) => {
            emit(&value);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = e
                .report
                .clone()
                .unwrap_or_else(|| serde_json::json!({ "error": e.message, "exit_code": e.code }));
            emit(&body);
            eprintln!("robot: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
