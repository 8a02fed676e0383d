//! The `pdmp` command-line tool.
//!
//! Exit codes: 0 success, 1 a check failed, 2 numerical failure, 3 bad input.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pdmp_core::Error;

pub mod commands;
pub mod summary;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;
pub const EXIT_INPUT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "pdmp", version, about = "Optimal control of piecewise deterministic Markov processes")]
pub struct Cli {
    /// Worker threads for data-parallel loops (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model assumptions numerically.
    Validate(ValidateArgs),
    /// Solve the discounted problem by value iteration.
    SolveDiscounted(DiscountedArgs),
    /// Solve the long-run average problem by vanishing discount.
    SolveAverage(AverageArgs),
    /// Estimate costs of a policy by simulation.
    Simulate(SimulateArgs),
    /// Re-check a stored solution.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model config file.
    #[arg(long)]
    pub model: PathBuf,
    /// Keep only these action indices (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub actions: Option<Vec<usize>>,
    /// Step of the backward recursion along flow lines.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Step of the along-path quadrature.
    #[arg(long)]
    pub delta_quad: Option<f64>,
    /// Truncation level of infinite-horizon tails.
    #[arg(long)]
    pub eps_tail: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    #[arg(long, default_value = "pdmp-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DiscountedArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// State reported in the summary (default: middle grid node).
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long, default_value = "pdmp-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AverageArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    /// Decreasing discount rates (default 0.5 * 2^-k, k = 0..8).
    #[arg(long, value_delimiter = ',')]
    pub alpha_schedule: Option<Vec<f64>>,
    /// Reference state; must be a grid node (default: middle node).
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Tolerance of the average-cost inequality.
    #[arg(long, default_value_t = 1e-3)]
    pub acoi_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replications of the simulation cross-check (0 disables it).
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 100.0)]
    pub horizon: f64,
    #[arg(long, default_value = "pdmp-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Policy table CSV.
    #[arg(long, conflicts_with = "action")]
    pub policy: Option<PathBuf>,
    /// Use one action throughout.
    #[arg(long)]
    pub action: Option<usize>,
    /// Start state (default: domain midpoint).
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also estimate the discounted cost at this rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Write the events of replication 0 to events.csv.
    #[arg(long)]
    pub trajectory: bool,
    #[arg(long, default_value = "pdmp-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory written by solve-discounted or solve-average.
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub acoi_tol: f64,
    /// Lower tolerance of the average-cost equation.
    #[arg(long, default_value_t = 1e-2)]
    pub acoe_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 100.0)]
    pub horizon: f64,
    /// Where to write verify.json (default: print only).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_)
        | Error::UnknownFamily { .. }
        | Error::ParameterRange { .. }
        | Error::KernelMass { .. }
        | Error::OutsideDomain { .. }
        | Error::Infeasible { .. }
        | Error::InvalidArgument(_)
        | Error::Io(_) => EXIT_INPUT,
        Error::NonFinite { .. }
        | Error::BeyondHitTime { .. }
        | Error::Divergent { .. }
        | Error::OutsideGridHull { .. }
        | Error::StepSize { .. }
        | Error::NotConverged { .. }
        | Error::Monotonicity { .. }
        | Error::SweepUnbounded { .. }
        | Error::Explosion { .. } => EXIT_NUMERIC,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Failure {
        Failure::input(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Failure::input("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::dispatch(&cli.command)),
            Err(e) => Err(Failure::input(e.to_string())),
        },
        None => commands::dispatch(&cli.command),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
