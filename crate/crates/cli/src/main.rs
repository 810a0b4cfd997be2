//! `ecgm` — batch front end for the ECG classification toolkit.
//!
//! Four subcommands: `synth` writes a deterministic synthetic corpus,
//! `train` runs a stratified split plus k-fold cross-validated training,
//! `eval` scores a checkpoint on a corpus slice, and `plot` renders a
//! training log to SVG. Exit codes: 0 success, 2 usage error, 1 runtime
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod plot;

use config::CliError;

/// Environment variable giving the default output root when `--out` is
/// omitted: commands write to `$ECGM_OUT/<command>`.
pub const OUT_ROOT_ENV: &str = "ECGM_OUT";

#[derive(Parser)]
#[command(name = "ecgm", version, about = "ECG sequence-classifier toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic corpus with a matching label map.
    Synth {
        /// Corpus directory to create (default: $ECGM_OUT/synth).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of records.
        #[arg(long, default_value_t = 64)]
        records: usize,
        /// Number of label classes (1 to 26).
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Hold out a stratified test set, then train k cross-validation folds.
    Train {
        /// Corpus directory (from `synth` or converted records).
        #[arg(long)]
        data: PathBuf,
        /// key=value config file; see README for the keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory to create (default: $ECGM_OUT/train).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cross-validation folds (at least 2).
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Overrides the `seed` config key.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint and write per-class + macro metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory.
        #[arg(long)]
        data: PathBuf,
        /// Split plan (split.tsv from `train`): restricts scoring to the
        /// held-out test records, or to one fold's validation slice with
        /// `--fold`. Without it the whole corpus is scored.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Score fold K's validation records instead of the test set.
        #[arg(long)]
        fold: Option<usize>,
        /// Report directory (default: $ECGM_OUT/eval).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render learning-rate, loss, and metric curves from a training log.
    Plot {
        /// A train.log produced by `train`.
        #[arg(long)]
        log: PathBuf,
        /// SVG file to write (default: $ECGM_OUT/plot.svg).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth {
            out,
            records,
            classes,
            seed,
        } => commands::synth(config::resolve_out(out, "synth")?, records, classes, seed),
        Command::Train {
            data,
            config,
            out,
            folds,
            seed,
        } => commands::train(
            data,
            config.as_deref(),
            config::resolve_out(out, "train")?,
            folds,
            seed,
        ),
        Command::Eval {
            checkpoint,
            data,
            split,
            fold,
            out,
        } => commands::eval(
            checkpoint,
            data,
            split.as_deref(),
            fold,
            config::resolve_out(out, "eval")?,
        ),
        Command::Plot { log, out } => {
            let out = match out {
                Some(p) => p,
                None => config::resolve_out(None, "plot")?.with_extension("svg"),
            };
            commands::plot(log, out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
