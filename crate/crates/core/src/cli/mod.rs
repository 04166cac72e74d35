//! Run configuration and the subcommands behind the `eegformer` binary.
//!
//! Exit codes: 0 success, 2 usage or I/O, 3 data contract, 4 numeric failure.

mod commands;
mod config;
mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{cmd_eval, cmd_features, cmd_synth, cmd_train, TrainOutputs};
pub use config::{RunConfig, SignalConfig, SEED_ENV};
pub use pipeline::{load_epochs, load_stats, prepare, stats_to_text, Prepared};

use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_) | Error::Config(_) | Error::Io { .. } | Error::Checkpoint { .. } => EXIT_USAGE,
        Error::Dimension { .. }
        | Error::Contract(_)
        | Error::Format { .. }
        | Error::UnmappableLabel(_)
        | Error::Split(_) => EXIT_DATA,
        Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(name = "eegformer", version, about = "Transformer classifier for multichannel EEG windows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Preprocess, split, train and write a checkpoint with its provenance.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Export a 2-D projection of the learned features.
    Features(FeaturesArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = ["2", "3", "6"])]
    pub classes: String,
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    #[arg(long, default_value_t = 30.0)]
    pub seconds: f64,
    /// Falls back to EEGFORMER_SEED, then 7.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides shared by the commands that read data.
#[derive(Debug, Args, Clone, Default)]
pub struct Overrides {
    /// Any config setting, e.g. `--set train.lr=0.0005`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    pub set: Vec<(String, String)>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

impl Overrides {
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = self.set.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.into(), v));
            }
        };
        push("seed", self.seed.map(|s| s.to_string()));
        push("signal.window", self.window.map(|s| s.to_string()));
        push("signal.stride", self.stride.map(|s| s.to_string()));
        out
    }
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest of the recordings.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = ["gender", "age6", "load2", "load3"])]
    pub scheme: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub split_mode: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`; its run_config.txt and standardization.txt sit beside it.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t = Part::Test)]
    pub split: Part,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory; receives features.tsv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Part::All)]
    pub split: Part,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|n| println!("wrote {n} files to {}", a.out.display())),
        Command::Train(a) => cmd_train(a).map(|o| println!("{}", o.summary)),
        Command::Eval(a) => cmd_eval(a).map(|r| println!("{}", r.summary())),
        Command::Features(a) => cmd_features(a).map(|n| println!("wrote {n} projected rows")),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
