//! Masked-LM corruption and mutually exclusive mask sets.
//!
//! A segment's eligible positions (everything but `[CLS]`, `[SEP]`, `[PAD]`)
//! are shuffled once and cut into `k` disjoint sets of `⌊m·E⌋` positions.
//! Each set's positions are split 80/10/10 between `[MASK]`, a random
//! replacement, and the original token by exact counts.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::wordpiece::{TokenId, TokenSequence, Vocab};

pub const MASK_FRACTION: f64 = 0.8;
pub const RANDOM_FRACTION: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("mask sets cannot be disjoint: {k} sets at rate {rate} exceed the eligible positions")]
    RateTooHigh { k: usize, rate: f64 },
    #[error("mask rate must be in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("plan position {pos} outside a sequence of {len}")]
    PositionOutOfRange { pos: usize, len: usize },
    #[error("vocabulary has no replacement candidates")]
    NoReplacementCandidates,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskAction {
    Mask,
    RandomReplace,
    Keep,
}

/// Predicted positions of one mask set with their corruption and targets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskPlan {
    pub positions: Vec<usize>,
    pub actions: Vec<MaskAction>,
    pub targets: Vec<TokenId>,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn count(&self, action: MaskAction) -> usize {
        self.actions.iter().filter(|&&a| a == action).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskSetFamily {
    pub plans: Vec<MaskPlan>,
}

/// `(mask, random, keep)` counts for a plan of `n` positions.
pub fn action_counts(n: usize) -> (usize, usize, usize) {
    let n_mask = (MASK_FRACTION * n as f64).round() as usize;
    let n_rand = (RANDOM_FRACTION * n as f64).round() as usize;
    let n_mask = n_mask.min(n);
    let n_rand = n_rand.min(n - n_mask);
    (n_mask, n_rand, n - n_mask - n_rand)
}

/// Size of one mask set over `eligible` positions: `⌊rate · eligible⌋`.
pub fn set_size(rate: f64, eligible: usize) -> usize {
    // tolerate representation error such as 0.15 * 20 = 3.0000000000000004
    (rate * eligible as f64 + 1e-9).floor() as usize
}

pub fn validate_rate(rate: f64, k: usize) -> Result<(), MaskError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(MaskError::InvalidRate(rate));
    }
    if k as f64 * rate > 1.0 + 1e-12 {
        return Err(MaskError::RateTooHigh { k, rate });
    }
    Ok(())
}

/// Draws `k` disjoint mask sets, each of `⌊rate · E⌋` eligible positions.
pub fn sample_mask_sets<R: Rng + ?Sized>(
    seq: &TokenSequence,
    rate: f64,
    k: usize,
    rng: &mut R,
) -> Result<MaskSetFamily, MaskError> {
    validate_rate(rate, k)?;
    let mut eligible = seq.eligible_positions();
    let size = set_size(rate, eligible.len());
    eligible.shuffle(rng);
    let plans = (0..k)
        .map(|j| {
            let mut positions = eligible[j * size..(j + 1) * size].to_vec();
            positions.sort_unstable();
            let (n_mask, n_rand, n_keep) = action_counts(size);
            let mut actions: Vec<MaskAction> = std::iter::repeat_n(MaskAction::Mask, n_mask)
                .chain(std::iter::repeat_n(MaskAction::RandomReplace, n_rand))
                .chain(std::iter::repeat_n(MaskAction::Keep, n_keep))
                .collect();
            actions.shuffle(rng);
            let targets = positions.iter().map(|&p| seq.ids[p]).collect();
            MaskPlan { positions, actions, targets }
        })
        .collect();
    Ok(MaskSetFamily { plans })
}

/// Uniform non-special id different from `original`.
pub fn random_replacement<R: Rng + ?Sized>(
    original: TokenId,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<TokenId, MaskError> {
    let candidates = (0..vocab.len() as TokenId)
        .filter(|&i| !vocab.is_special(i) && i != original)
        .take(1)
        .count();
    if candidates == 0 {
        return Err(MaskError::NoReplacementCandidates);
    }
    loop {
        let id = rng.random_range(0..vocab.len() as TokenId);
        if id != original && !vocab.is_special(id) {
            return Ok(id);
        }
    }
}

/// Applies one plan; positions outside the plan are left untouched.
pub fn apply_mask_plan<R: Rng + ?Sized>(
    seq: &TokenSequence,
    plan: &MaskPlan,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<TokenSequence, MaskError> {
    let mut ids = seq.ids.clone();
    for (&pos, &action) in plan.positions.iter().zip(&plan.actions) {
        if pos >= ids.len() {
            return Err(MaskError::PositionOutOfRange { pos, len: ids.len() });
        }
        match action {
            MaskAction::Mask => ids[pos] = vocab.special().mask,
            MaskAction::RandomReplace => ids[pos] = random_replacement(ids[pos], vocab, rng)?,
            MaskAction::Keep => {}
        }
    }
    Ok(TokenSequence { ids, special_mask: seq.special_mask.clone() })
}
