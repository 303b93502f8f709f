//! `lgnet`: synthetic data generation, k-fold cross-validation, gradient
//! verification and ROC export.
//!
//! Exit codes: 0 success, 1 verification failure, 2 bad flags or
//! configuration, 3 bad input file, 4 numeric divergence.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CrossvalArgs, GradcheckArgs, RocArgs, SynthArgs};

#[derive(Parser)]
#[command(
    name = "lgnet",
    version,
    about = "Residual / non-local patch classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled patch dataset (.lgnd).
    Synth(SynthArgs),
    /// Stratified k-fold cross-validation of one model variant.
    Crossval(CrossvalArgs),
    /// Finite-difference check of every differentiable op and network.
    Gradcheck(GradcheckArgs),
    /// ROC points and AUC from one or more score files.
    Roc(RocArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Crossval(args) => commands::crossval(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::Roc(args) => commands::roc(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
