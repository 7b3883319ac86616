//! `focalmargin`: evaluate, check and compare the segmentation losses from the
//! command line. Results go to stdout as JSON (or CSV with `--csv`),
//! diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 validation failure or bad usage, 2 I/O or parse error.

mod args;
mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use commands::*;

#[derive(Debug, Parser)]
#[command(name = "focalmargin", version, about = "Asymmetric focal margin losses and their reductions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a loss and optionally write its logit gradient
    Loss(LossCmd),
    /// Compare analytic gradients with central differences on random inputs
    Gradcheck(GradcheckCmd),
    /// Check that every reduction edge between the losses holds numerically
    ReduceAudit(AuditCmd),
    /// Confusion counts and IoU/F1/recall/precision for prediction-truth pairs
    Metrics(MetricsCmd),
    /// Write a synthetic thin-structure dataset
    Synth(SynthCmd),
    /// Train the per-pixel linear model with one loss
    Train(TrainCmd),
    /// Train several loss variants over repeated seeds and summarize
    Sweep(SweepCmd),
    /// Tabulate an entropy loss and its foreground/background terms against the margin
    MarginTable(MarginTableCmd),
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;

fn exit_code(err: &anyhow::Error) -> u8 {
    use focalmargin::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(_) | Error::Json(_) | Error::Parse { .. } => EXIT_IO,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
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
    let result = match &cli.command {
        Command::Loss(c) => loss(c),
        Command::Gradcheck(c) => gradcheck(c),
        Command::ReduceAudit(c) => reduce_audit_cmd(c),
        Command::Metrics(c) => metrics_cmd(c),
        Command::Synth(c) => synth(c),
        Command::Train(c) => train_cmd(c),
        Command::Sweep(c) => sweep(c),
        Command::MarginTable(c) => margin_table(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
