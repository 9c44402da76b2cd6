//! Masked-LM training: loss, Adam, mask accumulation, stateful epochs over
//! the stream schedule, masked perplexity, checkpoints and the cell
//! throughput benchmark.

mod bench;
mod checkpoint;
mod epoch;
mod optim;
mod step;

pub use bench::{bench_cell, compare_variants, BenchReport, VariantComparison};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use epoch::{eval_perplexity, pretrain, run_epoch, EpochReport, EvalReport, EvalSettings};
pub use optim::{clip_global_norm, effective_lr, OptimState};
pub use step::{
    accumulate_step, mask_batch, masked_lm_loss, run_pass, state_digest, AccumOutcome, MaskedLoss, PassInput,
    PassResult,
};

use crate::corpus::CorpusError;
use crate::masking::{validate_rate, MaskError};
use crate::model::ModelError;
use crate::numkernel::KernelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("evaluation set has no predicted positions")]
    EmptyHoldout,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("masking: {0}")]
    Mask(#[from] MaskError),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("kernel: {0}")]
    Kernel(#[from] KernelError),
}

/// Everything about a pretraining run except the model shape.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunConfig {
    pub epochs: usize,
    /// Number of disjoint mask sets per batch.
    pub mask_accum: usize,
    pub mask_rate: f64,
    pub batch: usize,
    pub seq_len: usize,
    pub btbptt: bool,
    pub seed: u64,
    pub lr: f64,
    /// Per-epoch learning-rate factor.
    pub decay: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Evaluate the holdout every this many epochs (and after the last).
    pub eval_every: usize,
    pub eval_seed: u64,
    /// Run the mask-accumulation passes on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            mask_accum: 4,
            mask_rate: 0.15,
            batch: 20,
            seq_len: 128,
            btbptt: true,
            seed: 1,
            lr: 1e-3,
            decay: 0.95,
            grad_clip: Some(10.0),
            eval_every: 1,
            eval_seed: 0x5eed,
            parallel: false,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        validate_rate(self.mask_rate, self.mask_accum)?;
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.mask_accum == 0 {
            return bad("at least one mask set is required");
        }
        if self.batch == 0 {
            return bad("batch size must be positive");
        }
        if self.seq_len < 3 {
            return bad("sequence length must be at least 3");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("learning rate must be positive and decay in (0, 1]");
        }
        if matches!(self.grad_clip, Some(c) if c <= 0.0 || c.is_nan()) {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }
}
