//! `zirf`: simulate benchmark data, run variable selection, fit
//! zero-inflated count models and re-render reports.

mod commands;
mod manifest;

use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{FitArgs, ReportArgs, SelectArgs, SimulateArgs};

#[derive(Debug, Parser)]
#[command(
    name = "zirf",
    version,
    about = "Random-forest variable selection and zero-inflated count regression"
)]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "ZIRF_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a simulated dataset.
    Simulate(SimulateArgs),
    /// Run variable selection on a CSV dataset.
    Select(SelectArgs),
    /// Fit a zero-inflated Poisson or negative-binomial regression.
    FitZi(FitArgs),
    /// Re-render tables and figures of an earlier run.
    Report(ReportArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(zirf::Error),
    Convergence(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(zirf::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Convergence(_) => 4,
        }
    }
}

impl From<zirf::Error> for CliError {
    fn from(e: zirf::Error) -> Self {
        match e {
            zirf::Error::InvalidConfig(msg) => CliError::Usage(msg),
            other => CliError::Data(other),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Convergence(m) => write!(f, "convergence failure: {m}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or(0);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("zirf: could not start worker pool: {e}");
        return ExitCode::from(2);
    }
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &argv),
        Command::Select(a) => commands::select(a, &argv),
        Command::FitZi(a) => commands::fit_zi(a, &argv),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zirf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
