//! `maest` command-line front end.
//!
//! Exit codes: 0 on success, 1 for user errors (bad flags, configs or inputs),
//! 2 for internal failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<maest::Error> for CliError {
    fn from(e: maest::Error) -> Self {
        use maest::Error as E;
        match e {
            E::Numerics(_) => CliError::Internal(e.to_string()),
            E::Io(ref io) if io.kind() != std::io::ErrorKind::NotFound => {
                CliError::Internal(e.to_string())
            }
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "maest",
    version,
    about = "Music audio spectrogram transformer pipeline"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 forces the deterministic path.
    #[arg(long, global = true, env = "MAEST_THREADS")]
    pub threads: Option<usize>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Spectrogram store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// `id<TAB>split` file (default `<store>/splits.tsv`).
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PatchoutArgs {
    /// Keep one time column in every T.
    #[arg(long)]
    pub t_keep: Option<usize>,
    /// Number of edge frequency rows to drop.
    #[arg(long)]
    pub f_rows: Option<usize>,
    /// Starting column for keep-1-of-T.
    #[arg(long)]
    pub phase: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labelled corpus and its split file.
    Synth {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        clips: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Compute mel spectrograms for 16 kHz WAV files into a store.
    Extract {
        /// Directory of .wav files or a text file listing one path per line.
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        /// `id<TAB>label[,label…]` with integer labels.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Normalization statistics of one split.
    Stats {
        #[command(flatten)]
        data: StoreArgs,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train the encoder; writes final and SWA archives and a metrics log.
    Train {
        #[command(flatten)]
        data: StoreArgs,
        /// Archive to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Extract track embeddings for every split.
    Embed {
        #[command(flatten)]
        data: StoreArgs,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// `block:kind[,block:kind…]`, kinds cls, dist, avg.
        #[arg(long)]
        espec: Option<String>,
        #[command(flatten)]
        patchout: PatchoutArgs,
    },
    /// Train an MLP probe on an embedding dataset.
    Probe {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Search the hyper-parameter grid instead of a single configuration.
        #[arg(long)]
        grid: bool,
    },
    /// Probe mAP for every block and token combination.
    SweepBlocks {
        #[command(flatten)]
        data: StoreArgs,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Inclusive 1-based range such as `5-12`.
        #[arg(long)]
        blocks: String,
    },
    /// Throughput (and optionally frozen-probe mAP) under inference patchout.
    Bench {
        #[command(flatten)]
        data: StoreArgs,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Train a probe at T=1 and score it under each setting.
        #[arg(long)]
        probe: bool,
        #[arg(long)]
        repetitions: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Extract { .. } => "extract",
            Command::Stats { .. } => "stats",
            Command::Train { .. } => "train",
            Command::Embed { .. } => "embed",
            Command::Probe { .. } => "probe",
            Command::SweepBlocks { .. } => "sweep-blocks",
            Command::Bench { .. } => "bench",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
