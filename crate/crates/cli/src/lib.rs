//! Command-line driver. [`run`] executes a parsed [`Cli`]; the `eae` binary
//! only adds logging and exit codes.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{Preset, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "eae", version, about = "Event-argument extraction as binary entailment")]
pub struct Cli {
    /// TOML run configuration layered over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named configuration to start from (default: paper).
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct CorpusArgs {
    /// Annotated corpus (JSON lines or BIO).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `jsonl` or `bio`.
    #[arg(long)]
    pub format: Option<String>,
    /// Relation sidecar for a BIO corpus.
    #[arg(long)]
    pub relations: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Splits a corpus and writes premise-hypothesis pairs.
    Pairgen {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Every event sentence becomes a test premise.
        #[arg(long)]
        test_only: bool,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// k-fold training on the train split of a pair file.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Needed by the template ablation to rebuild test pairs.
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Scores a checkpoint on one split of a pair file.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also write an F1 bar chart.
        #[arg(long)]
        plot: bool,
    },
    /// Inter-annotator agreement from two annotated corpora or from counts.
    Iaa {
        /// JSON or TOML list of per-relation `tp`/`fn`/`fp` (and optional `tn`).
        #[arg(long, conflicts_with_all = ["annotator_a", "annotator_b"])]
        counts: Option<PathBuf>,
        #[arg(long, requires = "annotator_b")]
        annotator_a: Option<PathBuf>,
        #[arg(long, requires = "annotator_a")]
        annotator_b: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
    },
    /// Builds event-argument graphs from an annotated corpus or raw text.
    Extract {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Raw document; sentences are tagged by the configured provider.
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long, conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Answer from the corpus's gold relations instead of a model.
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_enum)]
        provider: Option<config::ProviderKind>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Corpus and dataset statistics.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pairgen { .. } => "pairgen",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Iaa { .. } => "iaa",
            Command::Extract { .. } => "extract",
            Command::Stats { .. } => "stats",
        }
    }
}

/// Resolves the configuration and runs the command. Returns the text
/// report that the binary prints.
pub fn run(cli: Cli) -> Result<String> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), cli.preset, cli.seed)?;
    if let Some(dir) = cli.output_dir {
        cfg.paths.output_dir = dir;
    }
    commands::dispatch(cli.command, cfg)
}

/// Parses `args` (including the program name) and runs them.
pub fn run_args<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}
