//! `bimvfi` command line: generate synthetic data, train, interpolate, and
//! evaluate.
//!
//! Exit codes: 0 on success, 1 for user errors (bad arguments, unreadable
//! inputs, invalid configs), 2 for internal errors (non-finite losses,
//! shape violations).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bimvfi", version, about = "Bidirectional-motion-field frame interpolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Assert single-threaded, fixed-order arithmetic (always on; the flag
    /// documents the contract for scripts).
    #[arg(long)]
    deterministic: bool,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic moving-object dataset with ground-truth flows.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train with teacher/student distillation; writes checkpoints and a
    /// loss CSV.
    Train {
        #[command(flatten)]
        common: Common,

        /// Directory of training triplets (manifest or folder layout).
        #[arg(long)]
        data: PathBuf,

        /// Resume from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Interpolate between two frames at one or more timesteps.
    Infer {
        #[command(flatten)]
        common: Common,

        /// Comma-separated interpolation timesteps, overriding the config.
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,

        /// Checkpoint path, overriding the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,

        /// First source frame (PNG), overriding the config.
        #[arg(long)]
        frame0: Option<PathBuf>,

        /// Second source frame (PNG), overriding the config.
        #[arg(long)]
        frame1: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset; writes a metrics CSV.
    Eval {
        #[command(flatten)]
        common: Common,

        /// Checkpoint path, overriding the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,

        /// Dataset directory, overriding the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// User mistakes exit 1, broken internal invariants exit 2.
fn exit_code_for(err: &bimvfi::Error) -> u8 {
    use bimvfi::Error::*;
    match err {
        NonFiniteLoss { .. } | DimensionMismatch { .. } | UnnormalizedKernels { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Train { common, data, resume } => commands::train(&common, &data, resume.as_deref()),
        Command::Infer {
            common,
            t,
            checkpoint,
            frame0,
            frame1,
        } => commands::infer(&common, &t, checkpoint, frame0, frame1),
        Command::Eval {
            common,
            checkpoint,
            data,
        } => commands::eval(&common, checkpoint, data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

pub(crate) use Common as CommonArgs;
