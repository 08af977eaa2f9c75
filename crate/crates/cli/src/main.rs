mod check;
mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tangle_core::qbd::{DEFAULT_MAX_LEVEL, DEFAULT_TOL};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "TANGLE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tangle", version, about = "Tip dynamics of a DAG ledger: analytic solver and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationary tip counts and throughput at one parameter point.
    Solve(commands::SolveArgs),
    /// Sojourn time of an arriving tip: mean and distribution function.
    Sojourn(commands::SojournArgs),
    /// Measures over a parameter grid, as CSV.
    Sweep(commands::SweepArgs),
    /// Gillespie simulation of the tip process.
    Simulate(commands::SimulateArgs),
    /// Run the numerical self-checks.
    Check(check::CheckArgs),
}

/// Model parameters shared by the single-point commands.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Arrival rate of new transactions.
    #[arg(long)]
    pub lambda: f64,
    /// Connection rate per internal tip per boundary pair.
    #[arg(long)]
    pub mu: f64,
    /// Impatience rate of an internal tip.
    #[arg(long)]
    pub alpha: f64,
    /// Maximal number of boundary tips (M).
    #[arg(long)]
    pub capacity: usize,
    /// Tail-mass tolerance of the adaptive truncation.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Largest truncation level tried.
    #[arg(long, default_value_t = DEFAULT_MAX_LEVEL)]
    pub max_level: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tangle_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    /// 1 failed check, 2 invalid input, 3 no convergence or numerical failure.
    fn exit_code(&self) -> u8 {
        use tangle_core::Error as E;
        match self {
            CliError::ChecksFailed(_) | CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::NonPositiveRate { .. }
                | E::CapacityTooSmall(_)
                | E::IndexOutOfRange(_)
                | E::GridError(_)
                | E::InvalidConfig(_) => 2,
                E::NoConvergence { .. }
                | E::DivergentMean { .. }
                | E::SingularBlock { .. }
                | E::SingularSystem(_) => 3,
            },
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={value} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Solve(args) => commands::solve(&args),
        Command::Sojourn(args) => commands::sojourn(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Check(args) => check::run(&args),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
