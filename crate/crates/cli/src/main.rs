use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod output;

#[derive(Debug, Parser)]
#[command(name = "dart", version, about = "Bayesian dose-response matrix completion", arg_required_else_help = true)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps every worker pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset and write it with a ready-to-fit config.
    Simulate,
    /// Sample the posterior and write draws.
    Fit,
    /// Posterior mean effects with 95% intervals for every cell.
    Predict {
        /// Draws file; defaults to draws.csv in the output directory.
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Pair-structured k-fold cross-validation.
    Crossval,
    /// Dose-holdout cross-validation of parametric curves.
    Benchmark,
    /// Convergence diagnostics, WAIC, PSIS-LOO and calibration.
    Diagnose {
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Aligned factors, activity calls and chemical prioritization.
    Report {
        #[arg(long)]
        draws: Option<PathBuf>,
        /// CSV of `chemical_id,<score>` used to order the prioritization.
        #[arg(long)]
        exposure: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
