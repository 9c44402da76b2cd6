use std::hash::{DefaultHasher, Hasher};

use rayon::prelude::*;

use crate::corpus::Batch;
use crate::masking::{apply_mask_plan, sample_mask_sets, MaskError};
use crate::model::{forward, LayerState, ModelParams, ParamVars};
use crate::numkernel::{KernelError, Tape, Tensor, Var};
use crate::rng::substream;
use crate::wordpiece::{TokenId, TokenSequence, Vocab};

use super::TrainError;

/// One corrupted copy of a batch and the flat positions (`row·N + t`) to
/// predict, with their original tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PassInput {
    pub tokens: Vec<TokenId>,
    pub predicted: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Draws `k` disjoint mask sets for every row of `batch` and builds one
/// corrupted input per set.
///
/// Randomness is keyed by `(seed, prefix…, segment)` so a segment gets the
/// same masks whichever row or batch it lands in.
pub fn mask_batch(
    batch: &Batch,
    vocab: &Vocab,
    rate: f64,
    k: usize,
    seed: u64,
    prefix: &[u64],
) -> Result<Vec<PassInput>, MaskError> {
    let n = batch.seq_len;
    let mut passes = vec![
        PassInput { tokens: batch.tokens.clone(), predicted: Vec::new(), targets: Vec::new() };
        k
    ];
    let mut tags = prefix.to_vec();
    for (r, seg) in batch.segments.iter().enumerate() {
        let Some(seg) = *seg else { continue };
        let seq = TokenSequence::new(batch.row(r).to_vec(), vocab);
        tags.push(seg as u64);
        let family = sample_mask_sets(&seq, rate, k, &mut substream(seed, &tags))?;
        for (j, (plan, pass)) in family.plans.iter().zip(&mut passes).enumerate() {
            tags.push(j as u64 + 1);
            let corrupted = apply_mask_plan(&seq, plan, vocab, &mut substream(seed, &tags))?;
            tags.pop();
            pass.tokens[r * n..(r + 1) * n].copy_from_slice(&corrupted.ids);
            pass.predicted.extend(plan.positions.iter().map(|&p| r * n + p));
            pass.targets.extend(plan.targets.iter().map(|&t| t as usize));
        }
        tags.pop();
    }
    Ok(passes)
}

/// Mean negative log-likelihood over the predicted positions.
#[derive(Clone, Copy, Debug)]
pub struct MaskedLoss {
    /// `None` when nothing was predicted.
    pub loss: Option<Var>,
    pub value: f64,
    pub positions: usize,
}

impl MaskedLoss {
    /// True when there was nothing to predict; the loss is then zero.
    pub fn is_empty(&self) -> bool {
        self.positions == 0
    }
}

pub fn masked_lm_loss(tape: &mut Tape, logits: Option<Var>, targets: &[usize]) -> Result<MaskedLoss, KernelError> {
    match logits {
        Some(l) if !targets.is_empty() => {
            let (loss, _) = tape.softmax_xent(l, targets)?;
            Ok(MaskedLoss { loss: Some(loss), value: tape.value(loss).data()[0], positions: targets.len() })
        }
        _ => Ok(MaskedLoss { loss: None, value: 0.0, positions: 0 }),
    }
}

/// Order-sensitive hash of every state bit, for checking that passes start
/// from identical states.
pub fn state_digest(state: &LayerState) -> u64 {
    let mut h = DefaultHasher::new();
    for s in state.layers.iter().flatten() {
        for v in s.h.data().iter().chain(s.c.data()) {
            h.write_u64(v.to_bits());
        }
    }
    h.finish()
}

#[derive(Clone, Debug)]
pub struct PassResult {
    pub loss: f64,
    pub predicted: usize,
    /// Gradients in [`ModelParams::tensors`] order.
    pub grads: Vec<Tensor>,
    pub final_states: LayerState,
    pub start_digest: u64,
}

/// Forward and backward for one corrupted batch from `states`.
pub fn run_pass(
    params: &ModelParams,
    input: &PassInput,
    batch: usize,
    seq_len: usize,
    states: &LayerState,
) -> Result<PassResult, TrainError> {
    let start_digest = state_digest(states);
    let cfg = &params.config;
    let mut tape = Tape::new();
    let pv = ParamVars::attach(&mut tape, params, true);
    let out = forward(&mut tape, &pv, &input.tokens, batch, seq_len, states, &input.predicted, cfg)?;
    let loss = masked_lm_loss(&mut tape, out.logits, &input.targets)?;
    let grads = match loss.loss {
        Some(l) => {
            let mut g = tape.backward(l)?;
            pv.all()
                .iter()
                .zip(params.tensors())
                .map(|(&v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect()
        }
        None => params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect(),
    };
    Ok(PassResult { loss: loss.value, predicted: loss.positions, grads, final_states: out.states, start_digest })
}

#[derive(Clone, Debug)]
pub struct AccumOutcome {
    /// Mean of the per-pass gradients.
    pub grads: Vec<Tensor>,
    /// Mean of the per-pass losses.
    pub loss: f64,
    /// Sum over passes of `loss · positions`.
    pub nll_sum: f64,
    pub predicted: usize,
    pub empty_passes: usize,
    /// States to carry into the next segment (from the first pass).
    pub next_states: LayerState,
    pub start_digests: Vec<u64>,
}

/// Runs every pass from the same `states` and averages their gradients.
///
/// With `parallel`, passes run on the rayon pool; the reduction is always
/// in pass order so results do not depend on the thread count.
pub fn accumulate_step(
    params: &ModelParams,
    inputs: &[PassInput],
    batch: usize,
    seq_len: usize,
    states: &LayerState,
    parallel: bool,
) -> Result<AccumOutcome, TrainError> {
    if inputs.is_empty() {
        return Err(TrainError::Config("no mask sets to accumulate".into()));
    }
    let run = |input: &PassInput| run_pass(params, input, batch, seq_len, states);
    let results: Vec<PassResult> = if parallel && inputs.len() > 1 {
        inputs.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        inputs.iter().map(run).collect::<Result<_, _>>()?
    };
    let k = results.len() as f64;
    let mut results = results.into_iter();
    let first = results.next().expect("at least one pass");
    let mut grads = first.grads;
    let mut loss = first.loss;
    let mut nll_sum = first.loss * first.predicted as f64;
    let mut predicted = first.predicted;
    let mut empty_passes = usize::from(first.predicted == 0);
    let mut start_digests = vec![first.start_digest];
    for r in results {
        for (g, add) in grads.iter_mut().zip(&r.grads) {
            g.add_scaled(add, 1.0);
        }
        loss += r.loss;
        nll_sum += r.loss * r.predicted as f64;
        predicted += r.predicted;
        empty_passes += usize::from(r.predicted == 0);
        start_digests.push(r.start_digest);
    }
    grads.iter_mut().for_each(|g| g.scale_in_place(1.0 / k));
    Ok(AccumOutcome {
        grads,
        loss: loss / k,
        nll_sum,
        predicted,
        empty_passes,
        next_states: first.final_states,
        start_digests,
    })
}
