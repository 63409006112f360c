//! The `lens` command line.
//!
//! Exit codes: 0 success, 1 computation error or checksum mismatch found by
//! `verify`, 2 usage or I/O error. The seed comes from `--seed`, then the
//! `LENS_SEED` environment variable, then the config file, then 0.

mod commands;
pub mod config;
pub mod provenance;

pub use commands::sweep_table;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::CorpusError;
use crate::finetune::FinetuneError;
use crate::ingest::archive::ArchiveError;
use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::tokenizer::TokenizerError;

pub use config::RunConfig;
pub use provenance::{read_provenance, Provenance};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> CliError {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Compute(_) => EXIT_COMPUTE,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) | ModelError::Checkpoint(_) | ModelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<FinetuneError> for CliError {
    fn from(e: FinetuneError) -> Self {
        match e {
            FinetuneError::Model(m) => m.into(),
            FinetuneError::Tokenizer(t) => t.into(),
            FinetuneError::Ingest(i) => i.into(),
            FinetuneError::Io(_)
            | FinetuneError::Format { .. }
            | FinetuneError::InvalidTask(_)
            | FinetuneError::EmptyDescription
            | FinetuneError::GranularityMismatch { .. }
            | FinetuneError::EmptyDataset => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::Io(_) | TokenizerError::Malformed(_) | TokenizerError::UnknownScheme(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) | CorpusError::Format(_) => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "lens", version, about = "Traffic foundation-model pipeline")]
pub struct Cli {
    /// Seed recorded into every artifact.
    #[arg(long, global = true, env = "LENS_SEED")]
    pub seed: Option<u64>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group pcap files into session flows and write a flow archive.
    Ingest(IngestArgs),
    /// Build a vocabulary file.
    TrainTokenizer(TokenizerArgs),
    /// Sample pre-training examples from a flow archive.
    BuildCorpus(CorpusArgs),
    /// Pre-train on a corpus and write a checkpoint plus a JSON-lines log.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint on one task.
    Finetune(FinetuneArgs),
    /// Predict a dataset split and write an evaluation report.
    Evaluate(EvaluateArgs),
    /// Pre-train one model per (alpha, beta) pair and tabulate MSP accuracy.
    Sweep(SweepArgs),
    /// Re-check the input checksums recorded in artifacts.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Pcap files or directories of `.pcap` files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep real endpoints instead of anonymizing.
    #[arg(long)]
    pub keep_raw: bool,
}

#[derive(Debug, Args)]
pub struct TokenizerArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    /// vanilla, wordpiece_word or wordpiece_pd.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Target vocabulary size, reserved tokens included.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Optimizer steps; defaults to `train.total_steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Train in double precision.
    #[arg(long)]
    pub f64: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines loss log, one record per step.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TaskArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// JSON-lines dataset of `{hex, header_len_per_packet, label}`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Task name from the config's `[[tasks]]`.
    #[arg(long)]
    pub task: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum, default_value = "train")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Directory for `report.json` (and `topk.csv`, `cdf.csv` for generation tasks).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Comma-separated alpha values (columns).
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    /// Comma-separated beta values (rows).
    #[arg(long, value_delimiter = ',')]
    pub beta: Vec<f64>,
    /// JSON result file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(required = true)]
    pub artifacts: Vec<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
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
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
