//! `mpm`: simulate datasets, run samplers, compute diagnostics and run the
//! estimator experiments from JSON configurations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "mpm",
    version,
    about = "Block-correlated multiple-filter PMMH experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the commands that read a config file. Flags win over file values.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Reuse the configuration recorded in a run manifest.
    #[arg(long, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Filter worker threads (the MPM_WORKERS variable is used when absent).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset and write it as CSV with a JSON sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of observations.
        #[arg(long = "T")]
        t: Option<usize>,
    },
    /// Run the configured sampler and write the chain and its manifest.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Inefficiency factors and posterior summaries of saved chains.
    Diagnose {
        /// Chain CSV files.
        #[arg(required = true)]
        chains: Vec<PathBuf>,
        /// Chain used as the RTNIF reference.
        #[arg(long)]
        benchmark: Option<PathBuf>,
        /// Iterations discarded from the start of every chain.
        #[arg(long, default_value_t = 0)]
        warmup: usize,
        /// Directory for CSV reports.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Estimator experiments.
    Experiment {
        kind: ExperimentKind,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Variance,
    Correlation,
    Sortbench,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common, t } => commands::simulate(&common, t),
        Command::Run {
            common,
            iterations,
            warmup,
        } => commands::run(&common, iterations, warmup),
        Command::Diagnose {
            chains,
            benchmark,
            warmup,
            out,
        } => commands::diagnose(&chains, benchmark.as_deref(), warmup, out.as_deref()),
        Command::Experiment { kind, common } => commands::experiment(kind, &common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
