//! `fanet`: train, evaluate and run the feedback-attention segmentation network.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fanet::model::Ablation;

/// Selects the compute device. Only `cpu` is available in this build.
pub const DEVICE_ENV: &str = "FANET_DEVICE";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(fanet::error::Error),
}

impl From<fanet::error::Error> for CliError {
    fn from(e: fanet::error::Error) -> Self {
        use fanet::error::Error;
        match e {
            Error::Config(m) => CliError::Config(m),
            Error::Manifest(m) => CliError::Config(format!("manifest: {m}")),
            other => CliError::Runtime(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fanet",
    version,
    about = "Feedback-attention segmentation network",
    after_help = "Environment:\n  FANET_DEVICE  compute device (only `cpu` is supported)\n\nExit codes: 0 success, 1 runtime error, 2 usage or configuration error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults are used for anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory every artifact is written under.
    #[arg(long, default_value = "fanet-out")]
    pub out: PathBuf,
    /// Training seed (`train.seed`); for synth-gen the generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset manifest, or `synthetic` for the built-in blob generator.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Dotted config override such as `train.epochs=5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one network and write checkpoints plus a CSV log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Ablation preset applied on top of the network config.
        #[arg(long)]
        ablation: Option<Ablation>,
        /// Debug: write the final feedback masks of every sample as PNG.
        #[arg(long)]
        export_masks: bool,
    },
    /// Iteratively refine predictions for images or a dataset split.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image files or directories; the dataset's test split is used when absent.
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Refinement iterations [default: 10].
        #[arg(long)]
        iterations: Option<usize>,
        /// Resize input images to this square side first.
        #[arg(long)]
        size: Option<usize>,
        /// Also write the mask of every iteration.
        #[arg(long)]
        save_iterations: bool,
        /// Write an image/overlay pair per sample.
        #[arg(long)]
        overlay: bool,
        /// Stop once a mask repeats.
        #[arg(long)]
        early_stop: bool,
    },
    /// Score a checkpoint on the dataset's test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Refinement iterations [default: 10].
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train and compare the B1-B4 configurations.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Restrict to these presets; repeatable. All four by default.
        #[arg(long)]
        ablation: Vec<Ablation>,
        /// Refinement iterations [default: 10].
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Write the synthetic blob dataset with a manifest.
    SynthGen {
        #[command(flatten)]
        common: Common,
    },
}

fn check_device() -> Result<(), CliError> {
    match std::env::var(DEVICE_ENV) {
        Ok(d) if !d.is_empty() && !d.eq_ignore_ascii_case("cpu") => Err(CliError::Config(format!(
            "{DEVICE_ENV}={d}: only the cpu device is available"
        ))),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    check_device()?;
    match cli.command {
        Command::Train {
            common,
            ablation,
            export_masks,
        } => commands::train(&common, ablation, export_masks),
        Command::Infer {
            common,
            checkpoint,
            input,
            iterations,
            size,
            save_iterations,
            overlay,
            early_stop,
        } => commands::infer(
            &common,
            &checkpoint,
            &input,
            commands::InferFlags {
                iterations,
                size,
                save_iterations,
                overlay,
                early_stop,
            },
        ),
        Command::Eval {
            common,
            checkpoint,
            iterations,
        } => commands::eval(&common, &checkpoint, iterations),
        Command::Ablate {
            common,
            ablation,
            iterations,
        } => commands::ablate(&common, &ablation, iterations),
        Command::SynthGen { common } => commands::synth_gen(&common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
