//! `rgw`: rate functions, simulations and classification for reinforced
//! Galton–Watson processes from the command line.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod input;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::Format;

/// Exit statuses.
const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Core(rgw::Error),
    Io(String),
    VerifyFailed(usize),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_VALIDATION,
            CliError::VerifyFailed(_) => EXIT_VERIFY,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::VerifyFailed(n) => write!(f, "{n} verification check(s) failed"),
        }
    }
}

impl From<rgw::Error> for CliError {
    fn from(e: rgw::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rgw",
    version,
    about = "Reinforced Galton-Watson processes: rates, simulation, classification"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (default: available parallelism; RGW_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Table format.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rate function and its entropy upper bound over a family of targets.
    Rate(commands::RateArgs),
    /// Evanescence / persistence verdicts for targets or a simplex grid.
    Classify(commands::ClassifyArgs),
    /// Forward simulation of reinforced trees.
    Simulate(commands::SimulateArgs),
    /// The reinforced urn along a single lineage.
    Urn(commands::UrnArgs),
    /// The spine urn and its mean replacement matrix.
    Spine(commands::SpineArgs),
    /// The two-type benchmark tree.
    TwoType(commands::TwoTypeArgs),
    /// Conditional mean of the empirical measure given a half-space event.
    Gibbs(commands::GibbsArgs),
    /// The Lambert-W survival criterion.
    Survival(commands::SurvivalArgs),
    /// Cross-checks of every module against independent oracles.
    Verify(verify::VerifyArgs),
}

fn configure_threads(requested: Option<usize>) -> Result<(), CliError> {
    let from_env = match std::env::var("RGW_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            CliError::validation(format!("RGW_THREADS={v:?} is not a thread count"))
        })?),
        Err(_) => None,
    };
    let Some(n) = from_env.or(requested) else {
        return Ok(());
    };
    if n == 0 {
        return Err(CliError::validation("thread count must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Io(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads(cli.common.threads)?;
    let c = &cli.common;
    match &cli.command {
        Command::Rate(a) => commands::rate(a, c),
        Command::Classify(a) => commands::classify(a, c),
        Command::Simulate(a) => commands::simulate(a, c),
        Command::Urn(a) => commands::urn(a, c),
        Command::Spine(a) => commands::spine(a, c),
        Command::TwoType(a) => commands::two_type(a, c),
        Command::Gibbs(a) => commands::gibbs(a, c),
        Command::Survival(a) => commands::survival(a, c),
        Command::Verify(a) => verify::run(a, c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rgw: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
