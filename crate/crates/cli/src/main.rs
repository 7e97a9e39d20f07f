//! `titlegen prepare | train | eval | generate`
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 nothing passed
//! the filter, 4 numerical failure during training.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use titlegen::models::Architecture;

use config::Overrides;

#[derive(Parser)]
#[command(name = "titlegen", version, about = "Playlist title generation from track IDs")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: CommonFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonFlags {
    #[arg(long, global = true, value_enum)]
    arch: Option<ArchArg>,
    /// Drop the encoder's positional encoding.
    #[arg(long, global = true)]
    no_encoder_pos: bool,
    /// Re-permute training sources every epoch.
    #[arg(long, global = true)]
    shuffle_augment: bool,
    /// Sets split, init and epoch seeds at once.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Rnn,
    Transformer,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, split and index a raw playlist file.
    Prepare {
        /// Canonical JSONL, or any JSON the adapter understands.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Field mapping for non-canonical input.
        #[arg(long)]
        adapter: Option<PathBuf>,
    },
    /// Train on a prepared directory.
    Train {
        /// Directory written by `prepare`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Teacher-forced NLL of a checkpoint on a JSONL split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Greedy titles for JSONL track lists.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One JSON array of track IDs (or {"tracks": [...]}) per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        max_length: Option<usize>,
        #[arg(long)]
        suppress_unk: bool,
        /// Also decode a shuffled copy of each request and report whether
        /// the titles match.
        #[arg(long)]
        shuffle_check: bool,
    },
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn empty(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let overrides = Overrides {
        arch: c.arch.map(|a| match a {
            ArchArg::Rnn => Architecture::Rnn,
            ArchArg::Transformer => Architecture::Transformer,
        }),
        no_encoder_pos: c.no_encoder_pos,
        shuffle_augment: c.shuffle_augment,
        seed: c.seed,
        max_epochs: c.max_epochs,
        patience: c.patience,
        out: c.out.clone(),
    };
    let result = config::RunConfig::load(cli.config.as_deref()).and_then(|mut cfg| {
        cfg.apply(&overrides);
        match cli.command {
            Command::Prepare { input, adapter } => commands::prepare(cfg, input, adapter),
            Command::Train { data } => commands::train(cfg, data),
            Command::Eval {
                checkpoint,
                split,
                batch_size,
            } => commands::eval(cfg, &checkpoint, &split, batch_size),
            Command::Generate {
                checkpoint,
                input,
                max_length,
                suppress_unk,
                shuffle_check,
            } => commands::generate(cfg, &checkpoint, &input, max_length, suppress_unk, shuffle_check),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
