use std::sync::Arc;
use std::time::Instant;

use rand::RngCore;

use crate::corpus::{make_batch_streams, segment_stream, shuffle_documents, DocumentSet, Segment, StreamSchedule};
use crate::model::{forward, LayerState, ModelParams, ParamVars};
use crate::numkernel::Tape;
use crate::rng::{substream, tag};
use crate::wordpiece::{TokenSequence, Vocab};

use super::optim::{clip_global_norm, OptimState};
use super::step::{accumulate_step, mask_batch};
use super::{TrainError, TrainRunConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub perplexity: f64,
    pub mean_nll: f64,
    pub predicted: usize,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean negative log-likelihood per predicted position.
    pub train_loss: f64,
    pub predicted: usize,
    pub eligible: usize,
    pub batches: usize,
    /// Non-pad tokens seen (once per batch, not once per mask set).
    pub tokens: usize,
    pub seconds: f64,
    pub tokens_per_sec: f64,
    pub lr: f64,
    /// Mask-accumulation passes that had nothing to predict.
    pub empty_passes: usize,
    pub dev: Option<EvalReport>,
}

/// One pass over `sched` with an Adam update per batch. States start at
/// zero and each row's final states seed its next segment.
pub fn run_epoch(
    sched: &mut StreamSchedule,
    params: &mut ModelParams,
    opt: &mut OptimState,
    vocab: &Vocab,
    cfg: &TrainRunConfig,
    epoch: usize,
) -> Result<EpochReport, TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let names = ModelParams::names(&params.config);
    opt.epoch = epoch;
    sched.reset();
    let (b, n) = (sched.batch_size(), sched.seq_len());
    let mut states = LayerState::zeros(&params.config, b);
    let (mut nll, mut predicted, mut eligible, mut tokens, mut batches, mut empty) = (0.0, 0, 0, 0, 0, 0);
    while !sched.is_exhausted() {
        let batch = sched.next_batch()?;
        let inputs = mask_batch(&batch, vocab, cfg.mask_rate, cfg.mask_accum, cfg.seed, &[tag::MASK, epoch as u64])?;
        let mut out = accumulate_step(params, &inputs, b, n, &states, cfg.parallel)?;
        if let Some(max) = cfg.grad_clip {
            clip_global_norm(&mut out.grads, max);
        }
        opt.adam_step(&mut params.tensors_mut(), &out.grads, &names)?;
        states = out.next_states;
        nll += out.nll_sum;
        predicted += out.predicted;
        empty += out.empty_passes;
        for r in (0..b).filter(|&r| batch.segments[r].is_some()) {
            eligible += TokenSequence::new(batch.row(r).to_vec(), vocab).eligible_positions().len();
        }
        tokens += batch.pad.iter().filter(|p| !**p).count();
        batches += 1;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(EpochReport {
        epoch,
        train_loss: if predicted > 0 { nll / predicted as f64 } else { 0.0 },
        predicted,
        eligible,
        batches,
        tokens,
        seconds,
        tokens_per_sec: tokens as f64 / seconds.max(1e-9),
        lr: opt.lr(),
        empty_passes: empty,
        dev: None,
    })
}

/// How a holdout is masked and streamed.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub mask_rate: f64,
    pub batch: usize,
    pub btbptt: bool,
    pub seed: u64,
}

impl EvalSettings {
    pub fn from_run(cfg: &TrainRunConfig) -> Self {
        Self { mask_rate: cfg.mask_rate, batch: cfg.batch, btbptt: cfg.btbptt, seed: cfg.eval_seed }
    }
}

/// Masked perplexity of `params` over `segments`, streamed with carried
/// states. One mask set per segment, keyed by the segment index and seed.
pub fn eval_perplexity(
    segments: Arc<[Segment]>,
    params: &ModelParams,
    vocab: &Vocab,
    settings: &EvalSettings,
) -> Result<EvalReport, TrainError> {
    if segments.is_empty() {
        return Err(TrainError::EmptyHoldout);
    }
    let b = settings.batch.clamp(1, segments.len());
    let count = segments.len();
    let pad = vocab.special().pad;
    let mut sched = make_batch_streams(segments, b, settings.btbptt, Some(settings.seed), pad)?;
    let n = sched.seq_len();
    let cfg = &params.config;
    let mut states = LayerState::zeros(cfg, b);
    let (mut nll, mut predicted) = (0.0, 0usize);
    while !sched.is_exhausted() {
        let batch = sched.next_batch()?;
        let input = mask_batch(&batch, vocab, settings.mask_rate, 1, settings.seed, &[tag::EVAL_MASK])?
            .pop()
            .expect("one mask set");
        let mut tape = Tape::new();
        let pv = ParamVars::attach(&mut tape, params, false);
        let out = forward(&mut tape, &pv, &input.tokens, b, n, &states, &input.predicted, cfg)?;
        if let Some(logits) = out.logits {
            let (_, per_row) = tape.softmax_xent(logits, &input.targets)?;
            nll += per_row.sum();
            predicted += input.targets.len();
        }
        states = out.states;
    }
    if predicted == 0 {
        return Err(TrainError::EmptyHoldout);
    }
    let mean_nll = nll / predicted as f64;
    Ok(EvalReport { perplexity: mean_nll.exp(), mean_nll, predicted, segments: count })
}

/// Full training run: per epoch, shuffle documents, segment, build the
/// stream schedule, train, and (on cadence) evaluate the holdout.
pub fn pretrain(
    params: &mut ModelParams,
    opt: &mut OptimState,
    train: &DocumentSet,
    dev: Option<Arc<[Segment]>>,
    vocab: &Vocab,
    cfg: &TrainRunConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>, TrainError> {
    cfg.validate()?;
    let pad = vocab.special().pad;
    let settings = EvalSettings::from_run(cfg);
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let shuffle_seed = substream(cfg.seed, &[tag::SHUFFLE, epoch as u64]).next_u64();
        let direction_seed = substream(cfg.seed, &[tag::DIRECTIONS, epoch as u64]).next_u64();
        let docs = shuffle_documents(train, shuffle_seed);
        let segments: Arc<[Segment]> = segment_stream(&docs, cfg.seq_len, pad)?.into();
        let mut sched = make_batch_streams(segments, cfg.batch, cfg.btbptt, Some(direction_seed), pad)?;
        let mut report = run_epoch(&mut sched, params, opt, vocab, cfg, epoch)?;
        let due = (epoch + 1) % cfg.eval_every.max(1) == 0 || epoch + 1 == cfg.epochs;
        if let (Some(dev), true) = (&dev, due) {
            report.dev = Some(eval_perplexity(dev.clone(), params, vocab, &settings)?);
        }
        on_epoch(&report);
        reports.push(report);
    }
    Ok(reports)
}
