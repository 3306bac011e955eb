//! `barkspace` command-line front end.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::{EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "barkspace", version, about = "Arousal-valence analysis of dog vocalisations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOptions,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOptions {
    /// Seed for every random choice (defaults to the config's train.seed, else 42).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file overriding segmentation / features / train defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Progress messages on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect events in a WAV file (or every WAV in a directory) and write one WAV per event.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        top_db: Option<f64>,
        /// Frame length in samples.
        #[arg(long)]
        frame_len: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Generate a synthetic labelled corpus.
    Synth {
        #[arg(long, default_value_t = 90)]
        n_events: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign an event-level train/test split to a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Fraction of events sent to the training side.
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model for one dimension.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dim: String,
        #[arg(long, default_value = "siamese")]
        model: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        /// Siamese pairs sampled per epoch (default: four per training frame).
        #[arg(long)]
        pairs_per_epoch: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one side of a manifest's split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// train, test or all
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Project events onto the arousal-valence plane.
    Project {
        #[arg(long)]
        arousal_model: PathBuf,
        #[arg(long)]
        valence_model: PathBuf,
        /// A WAV file (each detected event is projected) or a manifest CSV.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// csv or json
        #[arg(long, default_value = "csv")]
        format: String,
        /// Also write per-class histograms of the projected coordinates.
        #[arg(long)]
        hist: Option<PathBuf>,
    },
    /// Compute log-Mel features for a manifest or a WAV file.
    Featurize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// bdn (binary tensor container) or csv
        #[arg(long, default_value = "bdn")]
        format: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

