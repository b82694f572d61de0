//! `eegsynth`: ingest EEG, train the conditional VAE, generate artificial
//! motor-imagery epochs and summarise ERD/ERS.
//!
//! Exit codes: 0 on success, 2 for bad input (flags, files, formats),
//! 3 for numeric failures (non-finite values, failed gradient checks).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod commands;
mod config;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    /// Wraps a library error with the file or stage it came from, keeping
    /// its class.
    pub fn context(context: impl std::fmt::Display, e: eegsynth::Error) -> Self {
        let msg = format!("{context}: {e}");
        if e.is_numeric() {
            CliError::Numeric(msg)
        } else {
            CliError::Input(msg)
        }
    }
}

impl From<eegsynth::Error> for CliError {
    fn from(e: eegsynth::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eegsynth", version, about = "Conditional VAE synthesis of motor-imagery EEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key=value` file; flags take precedence over its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read recordings, re-reference, band-pass, select channels and epoch.
    Ingest(commands::IngestArgs),
    /// Write a synthetic benchmark dataset with known ERD patterns.
    SynthData(commands::SynthArgs),
    /// Train the conditional VAE with validation-based early stopping.
    Train(commands::TrainArgs),
    /// Turn resting epochs into artificial epochs of a chosen condition.
    Generate(commands::GenerateArgs),
    /// Per-electrode averaged ERD/ERS time-frequency maps.
    Tfr(commands::TfrArgs),
    /// Per-subject, per-class alpha and beta power changes with box statistics.
    Bandpower(commands::BandpowerArgs),
    /// Finite-difference check of every layer and the full loss.
    Gradcheck(commands::GradcheckArgs),
    /// Parameter breakdown, layer shapes and training summary.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::SynthData(a) => commands::synth_data(a),
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Tfr(a) => commands::tfr(a),
        Command::Bandpower(a) => commands::bandpower(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
