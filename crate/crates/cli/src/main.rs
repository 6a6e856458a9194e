//! `tsalign`: run the label-transfer pipeline stage by stage, or end to end.
//!
//! Configuration precedence, lowest to highest: built-in defaults, the TOML
//! file from `--config` (or `TSALIGN_CONFIG` when the flag is absent),
//! then `--seed` and `--set section.key=value` flags in the order given.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsalign_core::error::FormatErrorKind;
use tsalign_core::Error;

pub const CONFIG_ENV: &str = "TSALIGN_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "tsalign", version, about = "Adversarial alignment of frozen time-series embeddings")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// `section.key=value`, TOML syntax for the value. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the labeled source cohort.
    Gen {
        /// Patch manifest to write; values go to a sibling `.tspx` file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed patches with the surrogate encoder, or validate and adopt
    /// vectors exported elsewhere.
    Embed {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TSEB file to adopt instead of running the surrogate.
        #[arg(long)]
        from_file: Option<PathBuf>,
    },
    /// Train the patient identifier on source embeddings.
    TrainIdentifier {
        #[arg(long)]
        embeddings: PathBuf,
        /// Output stem; writes `<stem>.tsnn` and `<stem>.labels.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade source patches into the unlabeled target stream.
    Simulate {
        #[arg(long)]
        patches: PathBuf,
        /// Identifier stem from `train-identifier`.
        #[arg(long)]
        identifier: PathBuf,
        /// Target patch manifest; the trace log goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train adapter, discriminator and task classifier on the training
    /// patients.
    Align {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Model directory.
        #[arg(long)]
        out: PathBuf,
        /// Classifier on adapted source only; no adversarial term.
        #[arg(long)]
        baseline: bool,
    },
    /// Score a trained model on the held-out patients.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage end to end, baseline and aligned, with the MAE table and
    /// domain-mixing rows.
    ReproFig3 {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status for each failure class.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingFile(_) => 2,
        Error::Config(_) | Error::Range(_) => 3,
        Error::Shape(_)
        | Error::Format {
            kind: FormatErrorKind::DimensionMismatch { .. } | FormatErrorKind::CountMismatch { .. },
            ..
        } => 4,
        Error::Numeric(_) => 5,
        _ => 1,
    }
}

pub fn kind_name(e: &Error) -> &'static str {
    match e {
        Error::Range(_) => "range",
        Error::Config(_) => "config",
        Error::Identity(_) => "identity",
        Error::Shape(_) => "dimension",
        Error::State(_) => "state",
        Error::Numeric(_) => "non_finite",
        Error::Format { kind, .. } => match kind {
            FormatErrorKind::DimensionMismatch { .. } | FormatErrorKind::CountMismatch { .. } => "dimension",
            _ => "format",
        },
        Error::GuardViolation(_) => "label_guard",
        Error::DegenerateData(_) => "degenerate_data",
        Error::MissingFile(_) => "missing_file",
        Error::Io { .. } => "io",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={first}");
            return ExitCode::from(3);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: kind={} msg={msg}", kind_name(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
