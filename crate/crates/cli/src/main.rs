//! `ctmag`: information sweeps, record simulation, Bayesian estimation and
//! self-verification, all writing plot-ready CSV.

mod commands;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use experiment::ExperimentSpec;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ctmag::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{failed} of {total} checks failed")]
    Verification { failed: usize, total: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctmag", version, about = "Continuous-time spin magnetometry toolkit")]
struct Cli {
    /// TOML experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fisher and quantum Fisher information over the J x kappa_t x eta grid.
    InfoSweep,
    /// Simulate photocurrent records.
    Simulate {
        /// Number of records (overrides `n_records`).
        #[arg(short = 'n', long)]
        n_records: Option<usize>,
    },
    /// Grid posterior for B from record files or directories of them.
    Estimate { records: Vec<PathBuf> },
    /// Cross-check closed forms against independent numerical routes.
    Verify {
        /// Scale the closed-form record Fisher information (negative control).
        #[arg(long, hide = true, default_value_t = 1.0)]
        inject_fault: f64,
        /// Skip the finite-J comparison.
        #[arg(long)]
        skip_finite_j: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::InfoSweep => "info-sweep",
            Command::Simulate { .. } => "simulate",
            Command::Estimate { .. } => "estimate",
            Command::Verify { .. } => "verify",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut experiment = match &cli.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        experiment.seed = seed;
    }
    experiment.check_workflow(cli.command.name())?;
    std::fs::create_dir_all(&cli.out).map_err(|source| CliError::Io {
        path: cli.out.clone(),
        source,
    })?;
    let out = &cli.out;
    match cli.command {
        Command::InfoSweep => commands::info_sweep(&experiment, out).map(|_| ()),
        Command::Simulate { n_records } => {
            if let Some(n) = n_records {
                experiment.n_records = n;
            }
            commands::simulate(&experiment, out).map(|_| ())
        }
        Command::Estimate { records } => commands::estimate(&experiment, &records, out),
        Command::Verify {
            inject_fault,
            skip_finite_j,
        } => commands::verify(&experiment, out, inject_fault, !skip_finite_j),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
