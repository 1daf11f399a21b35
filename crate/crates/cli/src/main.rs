//! Pipeline front end: generate scenarios, correlate streams, train the
//! fusion model, evaluate checkpoints, and run ablation sweeps. Every
//! subcommand stamps its output directory with a provenance manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "threatfuse",
    version,
    about = "Cross-modal threat event correlation and confidence-weighted attention fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args)]
pub(crate) struct CommonArgs {
    /// Run configuration TOML; built-in defaults when omitted.
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    /// Output directory, created if needed; all writes stay inside it.
    #[arg(long)]
    pub(crate) out: PathBuf,
    /// Override the seed of every configuration block.
    #[arg(long)]
    pub(crate) seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic event streams with planted attack chains.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Correlate two event streams into a foldwise training scenario.
    Correlate {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding one <modality>.jsonl file per stream.
        #[arg(long)]
        streams: PathBuf,
    },
    /// Train the fusion model on correlated streams.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding one <modality>.jsonl file per stream.
        #[arg(long)]
        streams: PathBuf,
    },
    /// Evaluate a trained checkpoint, including degraded-input policies.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding one <modality>.jsonl file per stream.
        #[arg(long)]
        streams: PathBuf,
        /// A train output directory with checkpoint.json and scenario.json.
        #[arg(long)]
        run: PathBuf,
    },
    /// Compare the full model against each single-flag ablation.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding one <modality>.jsonl file per stream.
        #[arg(long)]
        streams: PathBuf,
        /// Number of seeds in the sweep, starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Correlate { common, streams } => commands::correlate_cmd(&common, &streams),
        Command::Train { common, streams } => commands::train(&common, &streams),
        Command::Eval {
            common,
            streams,
            run,
        } => commands::eval(&common, &streams, &run),
        Command::Ablate {
            common,
            streams,
            seeds,
        } => commands::ablate(&common, &streams, seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
