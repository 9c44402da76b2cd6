//! The `melmo` command line.
//!
//! Every command appends one manifest record to `--manifest` (JSON lines).
//! Exit codes: 0 success, 1 internal failure, 2 bad input or flags.
//! `MELMO_THREADS=1` forces a single worker thread; results do not depend on
//! the thread count either way.

pub mod ablate;
mod commands;
pub mod gradcheck;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::CorpusError;
use crate::masking::MaskError;
use crate::model::{CellVariant, ModelConfig, ModelError};
use crate::numkernel::KernelError;
use crate::trainer::{TrainError, TrainRunConfig};
use crate::wordpiece::VocabError;

pub use ablate::{AblationCell, CellRun, CellSummary, Grid, Splits};
pub use gradcheck::{check_names, run_suite, CheckOutcome};
pub use manifest::{append_jsonl, RunManifest, BUILD_ID};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or unusable input files (exit code 2).
    #[error("{0}")]
    Input(String),
    /// Anything else (exit code 1).
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<VocabError> for CliError {
    fn from(e: VocabError) -> Self {
        CliError::Input(format!("wordpiece: {e}"))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(format!("corpus: {e}"))
    }
}

impl From<MaskError> for CliError {
    fn from(e: MaskError) -> Self {
        CliError::Input(format!("masking: {e}"))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Kernel(k) => k.into(),
            other => CliError::Input(format!("model: {other}")),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Internal(format!("numkernel: {e}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Corpus(c) => c.into(),
            TrainError::Mask(m) => m.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Kernel(k) => k.into(),
            TrainError::NonFiniteGradient(_) | TrainError::Shape(_) => CliError::Internal(format!("trainer: {e}")),
            other => CliError::Input(format!("trainer: {other}")),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "melmo", version, about = "Masked bidirectional LSTM language model pretraining")]
pub struct Cli {
    /// JSON-lines file that receives one manifest record per run.
    #[arg(long, global = true, default_value = "melmo-runs.jsonl")]
    pub manifest: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint.
    Pretrain(PretrainArgs),
    /// Masked perplexity of a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Per-token layer representations, or their scalar mix.
    Extract(ExtractArgs),
    /// Finite-difference verification of every backward rule.
    Gradcheck(GradcheckArgs),
    /// Sequence-length and BTBPTT ablation grids.
    Ablate(AblateArgs),
    /// Forward throughput of the two cell variants.
    BenchCell(BenchArgs),
    /// Write a synthetic corpus and its vocabulary.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Embedding and layer width; each direction projects to half of it.
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    /// Internal cell size per direction.
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    /// `a`: clip the cell state before the output; `b`: after it.
    #[arg(long, default_value = "b")]
    pub cell_variant: String,
    #[arg(long, default_value_t = 3.0)]
    pub cell_clip: f64,
    #[arg(long, default_value_t = 3.0)]
    pub proj_clip: f64,
}

impl ModelArgs {
    pub fn config(&self, vocab: usize) -> Result<ModelConfig, CliError> {
        let variant: CellVariant = self.cell_variant.parse().map_err(CliError::Input)?;
        let cfg = ModelConfig {
            layers: self.layers,
            width: self.width,
            hidden: self.hidden,
            proj: self.width / 2,
            vocab,
            cell_clip: self.cell_clip,
            proj_clip: self.proj_clip,
            variant,
        };
        if !self.width.is_multiple_of(2) {
            return Err(CliError::Input(format!("model: width {} must be even", self.width)));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Disjoint mask sets per batch.
    #[arg(long, default_value_t = 4)]
    pub mask_accum: usize,
    #[arg(long, default_value_t = 0.15)]
    pub mask_rate: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Per-epoch learning-rate factor.
    #[arg(long, default_value_t = 0.95)]
    pub decay: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    #[arg(long, default_value_t = 10.0)]
    pub grad_clip: f64,
    #[arg(long, default_value_t = 0x5eed)]
    pub eval_seed: u64,
}

impl OptimArgs {
    fn run_config(&self) -> TrainRunConfig {
        TrainRunConfig {
            epochs: self.epochs,
            mask_accum: self.mask_accum,
            mask_rate: self.mask_rate,
            lr: self.lr,
            decay: self.decay,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            eval_seed: self.eval_seed,
            parallel: rayon::current_num_threads() > 1,
            ..TrainRunConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PretrainArgs {
    /// Training text: one sentence per line, blank lines between documents.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Separate holdout corpus.
    #[arg(long, conflicts_with = "holdout_docs")]
    pub holdout: Option<PathBuf>,
    /// Hold out the last K documents of the training corpus instead.
    #[arg(long)]
    pub holdout_docs: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 20)]
    pub batch: usize,
    /// Run half of the batch rows through the corpus in reverse.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub btbptt: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Evaluate the holdout every this many epochs (and after the last).
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Checkpoint path.
    #[arg(long, default_value = "melmo.ckpt")]
    pub out: PathBuf,
    /// JSON-lines file that receives one record per epoch.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Evaluate only the last K documents (defaults to the checkpoint's holdout split).
    #[arg(long)]
    pub holdout_docs: Option<usize>,
    /// The following default to the values the checkpoint was trained with.
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long)]
    pub btbptt: Option<bool>,
    #[arg(long)]
    pub eval_seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Text to encode as a single sequence.
    #[arg(long)]
    pub input: PathBuf,
    /// `all` or a comma-separated list of layer indices (0 = embeddings).
    #[arg(long, default_value = "all")]
    pub layers: String,
    /// `uniform` or comma-separated unnormalized weights, one per layer;
    /// emits one mixed vector per token instead of per-layer vectors.
    #[arg(long)]
    pub mix: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Output file (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GradcheckArgs {
    /// Run only this check.
    #[arg(long)]
    pub op: Option<String>,
    /// Corrupt one backward rule, to confirm the suite notices.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Dev and test each take this many documents from the corpus tail.
    #[arg(long)]
    pub holdout_docs: usize,
    /// Predefined grids; repeatable.
    #[arg(long, value_enum)]
    pub grid: Vec<Grid>,
    /// Extra cells as `N:B` or `N:B:on|off`; repeatable.
    #[arg(long)]
    pub cell: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON-lines file that receives one record per (cell, seed) run.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BenchArgs {
    /// Positions per timed run (at least 1000).
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 20)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    /// Approximate corpus size in wordpieces.
    #[arg(long, default_value_t = 2_000_000)]
    pub tokens: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for corpus.txt and vocab.txt.
    #[arg(long)]
    pub out: PathBuf,
}

/// Sizes the global worker pool from `MELMO_THREADS`, if set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("MELMO_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("MELMO_THREADS must be a positive integer, got {v:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (including the program name), runs the command, writes
/// results to `out` and diagnostics to stderr, and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match commands::dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
