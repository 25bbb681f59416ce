//! `shortfall-ld`: validate scenarios, tabulate rates, solve the dual problem,
//! and verify decay rates by simulation.

mod commands;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shortfall_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    /// 1 validation failure, 2 solver failure, 3 input error.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 3,
            CliError::Core(e) => match e {
                CoreError::Parse(_)
                | CoreError::Io { .. }
                | CoreError::Dimension(_)
                | CoreError::Definiteness(_)
                | CoreError::WrongKind { .. }
                | CoreError::InvalidConfig(_) => 3,
                CoreError::DegenerateBenchmark
                | CoreError::ConditionN1
                | CoreError::SafeSecurityOptimal(_)
                | CoreError::Unsupported(_)
                | CoreError::BoundaryRefused(_)
                | CoreError::OutwardDrift(_) => 1,
                CoreError::Singular(_)
                | CoreError::NoStabilizingSolution(_)
                | CoreError::NoConvergence { .. }
                | CoreError::NonNormalizable(_)
                | CoreError::Oracle { .. }
                | CoreError::Unbracketable { .. }
                | CoreError::PathExplosion { .. }
                | CoreError::Insufficient(_) => 2,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "shortfall-ld", version, about = "Large-deviation shortfall rates for benchmarked portfolios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check ellipticity, condition (N) and factor stability.
    Validate(commands::ValidateArgs),
    /// Tabulate F(lambda) and its derivative on a lambda grid.
    Rate(commands::RateArgs),
    /// Solve the dual problem for a threshold q.
    Solve(commands::SolveArgs),
    /// Evaluate the optimal portfolio at factor points.
    Policy(commands::PolicyArgs),
    /// Estimate shortfall probabilities and their decay rate by simulation.
    Simulate(commands::SimulateArgs),
    /// Solve the scalar ergodic Bellman equation on a grid.
    Bellman(commands::BellmanArgs),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SHORTFALL_LD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("SHORTFALL_LD_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<u8, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Validate(a) => commands::validate(&a),
        Command::Rate(a) => commands::rate(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::Policy(a) => commands::policy(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Bellman(a) => commands::bellman(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
