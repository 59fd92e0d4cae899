//! `fracdet`: dataset preparation, preprocessing and loss kernels,
//! detection evaluation, and the detector-to-classifier pipeline, as
//! reproducible file-based subcommands.
//!
//! Exit codes are a stable contract: 0 success, 2 broken inputs or
//! invalid arguments, 3 requested metric undefined on the input, 4 some
//! corpus images failed while the rest were evaluated (outputs written),
//! 1 anything else.

mod cmd_eval_det;
mod cmd_kernels;
mod cmd_prepare;
mod cmd_run;
mod cmd_stats;
mod config;
mod failure;
mod images;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "fracdet", version, about = "Fracture-detection pipeline toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset distribution report
    Stats(cmd_stats::StatsArgs),
    /// Merge, filter, crop, and split a dataset for training
    Prepare(cmd_prepare::PrepareArgs),
    /// Detection metrics for a results document against ground truth
    EvalDet(cmd_eval_det::EvalDetArgs),
    /// Run the detection-classification pipeline over a corpus
    Run(cmd_run::RunArgs),
    /// Individual preprocessing and loss kernels
    #[command(subcommand)]
    Kernels(cmd_kernels::KernelsCmd),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats(args) => cmd_stats::run(args),
        Command::Prepare(args) => cmd_prepare::run(args),
        Command::EvalDet(args) => cmd_eval_det::run(args),
        Command::Run(args) => cmd_run::run(args),
        Command::Kernels(cmd) => cmd_kernels::run(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
