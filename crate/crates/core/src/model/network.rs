use crate::corpus::Direction;
use crate::numkernel::{KernelError, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::wordpiece::TokenId;

use super::cell::{run_direction, CellVars, StateVars};
use super::{DirState, LayerState, ModelConfig, ModelError, ModelParams};

#[derive(Clone, Copy, Debug)]
pub struct DirectionVars {
    pub cell: CellVars,
    pub ln_gamma: Var,
    pub ln_beta: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub forward: DirectionVars,
    pub backward: DirectionVars,
}

/// Model parameters registered on a tape.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub embedding: Var,
    pub layers: Vec<LayerVars>,
    pub out_w: Var,
    pub out_b: Var,
    all: Vec<Var>,
}

impl ParamVars {
    /// Registers every tensor of `params`, as trainable leaves or constants.
    pub fn attach(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        let all: Vec<Var> = params
            .tensors()
            .into_iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Self::from_vars(&all, params.layers.len())
    }

    /// Interprets handles given in [`ModelParams::tensors`] order.
    pub fn from_vars(all: &[Var], layers: usize) -> Self {
        assert_eq!(all.len(), 3 + 12 * layers, "parameter count matches layout");
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("parameter count matches layout");
        let embedding = next();
        let mut direction = || {
            let (w_in, w_rec, bias, w_proj) = (next(), next(), next(), next());
            DirectionVars { cell: CellVars { w_in, w_rec, bias, w_proj }, ln_gamma: next(), ln_beta: next() }
        };
        let layers = (0..layers)
            .map(|_| LayerVars { forward: direction(), backward: direction() })
            .collect();
        let (out_w, out_b) = (next(), next());
        Self { embedding, layers, out_w, out_b, all: all.to_vec() }
    }

    /// Handles in [`ModelParams::tensors`] order.
    pub fn all(&self) -> &[Var] {
        &self.all
    }
}

/// Output of one biLSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    /// `B·N × d`: normalized directions concatenated, plus the input.
    pub output: Var,
    /// Raw per-direction hidden states, `B·N × P` each.
    pub forward_hidden: Var,
    pub backward_hidden: Var,
    pub forward_final: StateVars,
    pub backward_final: StateVars,
}

#[allow(clippy::too_many_arguments)]
pub fn bilstm_layer(
    tape: &mut Tape,
    inputs: Var,
    batch: usize,
    seq_len: usize,
    init: [StateVars; 2],
    layer: &LayerVars,
    cfg: &ModelConfig,
) -> Result<LayerOutput, KernelError> {
    let width = tape.value(inputs).cols();
    if width != cfg.width {
        return Err(KernelError::Shape(format!("layer input width {width}, expected {}", cfg.width)));
    }
    let (fh, ff) = run_direction(tape, inputs, batch, seq_len, init[0], &layer.forward.cell, Direction::Forward, cfg)?;
    let (bh, bf) = run_direction(tape, inputs, batch, seq_len, init[1], &layer.backward.cell, Direction::Reverse, cfg)?;
    let fnorm = tape.layer_norm(fh, layer.forward.ln_gamma, layer.forward.ln_beta, LAYER_NORM_EPS)?;
    let bnorm = tape.layer_norm(bh, layer.backward.ln_gamma, layer.backward.ln_beta, LAYER_NORM_EPS)?;
    let joined = tape.concat_cols(&[fnorm, bnorm])?;
    let output = tape.add(joined, inputs)?;
    Ok(LayerOutput {
        output,
        forward_hidden: fh,
        backward_hidden: bh,
        forward_final: ff,
        backward_final: bf,
    })
}

/// Everything a forward pass produces.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `P × V` logits at the requested positions, if any were requested.
    pub logits: Option<Var>,
    /// `L + 1` handles of `B·N × d`: embeddings, then each layer's output.
    pub representations: Vec<Var>,
    pub layers: Vec<LayerOutput>,
    /// Final states, detached from the tape.
    pub states: LayerState,
}

/// Runs the network over `ids` (`batch × seq_len`, row-major) from `states`.
///
/// `predicted` lists flat positions `b·N + t` whose logits are needed.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    tape: &mut Tape,
    pv: &ParamVars,
    ids: &[TokenId],
    batch: usize,
    seq_len: usize,
    states: &LayerState,
    predicted: &[usize],
    cfg: &ModelConfig,
) -> Result<ForwardOutput, ModelError> {
    if ids.len() != batch * seq_len {
        return Err(ModelError::Config(format!("{} ids for a {batch}×{seq_len} batch", ids.len())));
    }
    if states.layers.len() != cfg.layers || states.batch() != batch {
        return Err(ModelError::Config("state does not match the batch or layer count".into()));
    }
    if let Some(&id) = ids.iter().find(|&&i| i as usize >= cfg.vocab) {
        return Err(ModelError::TokenOutOfRange { id, vocab: cfg.vocab });
    }
    let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let mut x = tape.gather_rows(pv.embedding, &rows)?;
    let mut representations = vec![x];
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut next_states = Vec::with_capacity(cfg.layers);
    for (lv, st) in pv.layers.iter().zip(&states.layers) {
        let init = [attach_state(tape, &st[0]), attach_state(tape, &st[1])];
        let out = bilstm_layer(tape, x, batch, seq_len, init, lv, cfg)?;
        next_states.push([detach(tape, out.forward_final), detach(tape, out.backward_final)]);
        x = out.output;
        representations.push(x);
        layers.push(out);
    }
    let logits = if predicted.is_empty() {
        None
    } else {
        let sel = tape.gather_rows(x, predicted)?;
        let z = tape.matmul(sel, pv.out_w)?;
        Some(tape.add_row(z, pv.out_b)?)
    };
    Ok(ForwardOutput { logits, representations, layers, states: LayerState { layers: next_states } })
}

fn attach_state(tape: &mut Tape, s: &DirState) -> StateVars {
    StateVars { h: tape.constant(s.h.clone()), c: tape.constant(s.c.clone()) }
}

fn detach(tape: &Tape, s: StateVars) -> DirState {
    DirState { h: tape.value(s.h).clone(), c: tape.value(s.c).clone() }
}

/// For each position, the `L + 1` width-`d` vectors (layer 0 = embeddings).
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationSet {
    /// `L + 1` tensors of `positions × d`.
    pub layers: Vec<Tensor>,
}

impl RepresentationSet {
    pub fn positions(&self) -> usize {
        self.layers.first().map_or(0, Tensor::rows)
    }

    pub fn width(&self) -> usize {
        self.layers.first().map_or(0, Tensor::cols)
    }

    /// The `L + 1` vectors of position `k`.
    pub fn at(&self, k: usize) -> Vec<&[f64]> {
        self.layers.iter().map(|t| t.row(k)).collect()
    }
}

/// Single-row pass from zero state returning every layer's representation.
pub fn represent(params: &ModelParams, ids: &[TokenId]) -> Result<RepresentationSet, ModelError> {
    let cfg = &params.config;
    let mut tape = Tape::new();
    let pv = ParamVars::attach(&mut tape, params, false);
    let state = LayerState::zeros(cfg, 1);
    let out = forward(&mut tape, &pv, ids, 1, ids.len(), &state, &[], cfg)?;
    Ok(RepresentationSet { layers: out.representations.iter().map(|&v| tape.value(v).clone()).collect() })
}

/// `gamma · Σ_l softmax(w)_l · h_l` for every position.
pub fn scalar_mix(reps: &RepresentationSet, weights: &[f64], gamma: f64) -> Result<Tensor, ModelError> {
    if weights.len() != reps.layers.len() {
        return Err(ModelError::Config(format!(
            "{} mix weights for {} layers",
            weights.len(),
            reps.layers.len()
        )));
    }
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = weights.iter().map(|w| (w - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let mut out = Tensor::zeros(reps.layers[0].shape());
    for (t, e) in reps.layers.iter().zip(&exp) {
        out.add_scaled(t, gamma * e / z);
    }
    Ok(out)
}
