//! Command-line front end: fit models, save them, and query saved models.

pub mod archive;
mod commands;
mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use archive::{ModelArchive, Provenance, FORMAT_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "ordgam",
    version,
    about = "Ordered-categorical GAMs for phenology stage data"
)]
pub struct Cli {
    /// Worker threads for parallel work (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and save it as a JSON archive.
    Fit(FitArgs),
    /// Linear predictor, stage probabilities or cumulative probabilities for new data.
    Predict(PredictArgs),
    /// Surrogate residuals of a fitted model on data.
    Residuals(ResidualArgs),
    /// Posterior samples of threshold-crossing days and their densities.
    Transitions(TransitionArgs),
    /// Day at which a given share of the population has reached a stage.
    QuantileDay(QuantileDayArgs),
    /// Rate of change of stage probabilities along a covariate.
    Rate(RateArgs),
    /// Simulate a dataset from a known truth.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Delim {
    /// Field delimiter: a single character, or "tab".
    #[arg(long, default_value = ",")]
    pub delimiter: String,
}

#[derive(Debug, Clone, Args)]
pub struct Output {
    /// CSV output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON mirror of the output.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model formula, e.g. "iStage ~ s(doy, k=25)".
    #[arg(long)]
    pub formula: String,
    /// Number of ordered stages.
    #[arg(long = "K")]
    pub k: usize,
    /// Stage labels in order, comma separated (default 1..K).
    #[arg(long, value_delimiter = ',')]
    pub stages: Option<Vec<String>>,
    /// Columns to read as factors even when their values look numeric.
    #[arg(long, value_delimiter = ',')]
    pub factors: Vec<String>,
    /// Column giving the number of observations each row stands for.
    #[arg(long)]
    pub count: Option<String>,
    #[command(flatten)]
    pub delim: Delim,
    /// Archive file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON summary file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictType {
    Response,
    CumulativeLeq,
    CumulativeGeq,
    Link,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub newdata: PathBuf,
    #[arg(long = "type", value_enum, default_value = "response")]
    pub kind: PredictType,
    /// Coverage of the link-scale band.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Posterior draws for a simulation band on the link scale (needs --seed).
    #[arg(long, requires = "seed")]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub delim: Delim,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ResidualArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Data with the stage column and every covariate of the model.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Surrogate draws per observation.
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// Covariate for the residual plot data, or "linear_predictor".
    #[arg(long, default_value = "linear_predictor")]
    pub against: String,
    /// Residual plot data: x, residual, running-mean trend.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Logistic Q-Q plot data.
    #[arg(long)]
    pub qq: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<String>,
    #[command(flatten)]
    pub delim: Delim,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Covariate to move along (default: the first smooth's covariate).
    #[arg(long)]
    pub var: Option<String>,
    /// Grid as from:to:step (default: whole days over the training range).
    #[arg(long)]
    pub grid: Option<String>,
    /// Values of the other covariates, name=value (repeatable).
    #[arg(long = "at", value_name = "NAME=VALUE")]
    pub at: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TransitionArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub draws: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Keep thresholds at their estimates instead of drawing them.
    #[arg(long)]
    pub fix_thresholds: bool,
    /// Kernel bandwidth in grid units (default: Silverman's rule).
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Density CSV: threshold, x, density.
    #[arg(long)]
    pub density: Option<PathBuf>,
    /// Per-threshold summary CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct QuantileDayArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Stage k in P(stage >= k).
    #[arg(long)]
    pub stage_k: usize,
    /// Target proportions, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Truth specification (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the seed in the specification.
    #[arg(long)]
    pub seed: u64,
    /// Overrides the row count in the specification.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub delim: Delim,
}

/// Errors split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(ordgam::Error),
}

impl From<ordgam::Error> for CliError {
    fn from(e: ordgam::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(_) => EXIT_NUMERIC,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("ordgam: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // A second call in the same process fails harmlessly; the first pool stays.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Residuals(a) => commands::residuals(a),
        Command::Transitions(a) => commands::transitions(a),
        Command::QuantileDay(a) => commands::quantile_day(a),
        Command::Rate(a) => commands::rate(a),
        Command::Simulate(a) => commands::simulate(a),
    }
}
