//! `moodshift`: command-line driver for catalog generation, indexing,
//! training, evaluation, ablation and inference.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "moodshift", version, about = "Mood-guided embedding transformation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; relative paths in the config resolve against it.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Master seed applied to every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "MOODSHIFT_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic catalog.
    Gen,
    /// Split the catalog and build similarity maps.
    Index(IndexArgs),
    /// Train a model (or k models when `kfold` is set).
    Train,
    /// Evaluate a model or baseline on a split.
    Evaluate(EvalArgs),
    /// Evaluate every method side by side.
    Compare(EvalArgs),
    /// Train and test every loss combination.
    Ablate,
    /// Transform embeddings toward a target mood and retrieve neighbors.
    Transform(TransformArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IndexArgs {
    /// Splits to build maps over.
    #[arg(long = "split", value_delimiter = ',', default_value = "train,test")]
    pub splits: Vec<String>,
    /// Neighbor-list length; overrides the config.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// model, random, avg-mood, oracle-top1, oracle-top100 or all.
    #[arg(long, default_value = "all")]
    pub method: String,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Checkpoint path; defaults to `model.mdl` in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Seed embeddings (EMB1 file).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target_mood: u32,
    /// Mood of every input embedding.
    #[arg(long, conflicts_with = "seed_moods")]
    pub seed_mood: Option<u32>,
    /// Whitespace-separated mood per input embedding.
    #[arg(long)]
    pub seed_moods: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Restrict retrieval to one split.
    #[arg(long)]
    pub split: Option<String>,
    /// Output JSONL; defaults to `transform.jsonl` in the output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
