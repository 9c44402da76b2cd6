//! The network: token embeddings, stacked biLSTM layers whose cells carry a
//! state projection, per-direction layer norm with a residual connection,
//! and a softmax head evaluated only where predictions are needed.
//!
//! Every layer keeps the width `d`: each direction projects to `d/2`, the two
//! normalized halves are concatenated and added to the layer input.

mod cell;
mod network;

pub use cell::{lstmp_step, lstmp_step_a, lstmp_step_b, run_direction, CellVars, StateVars};
pub use network::{
    bilstm_layer, forward, represent, scalar_mix, DirectionVars, ForwardOutput, LayerOutput, LayerVars, ParamVars,
    RepresentationSet,
};

use std::fmt;
use std::str::FromStr;

use crate::numkernel::{KernelError, Tensor};
use crate::rng::{substream, tag, uniform_tensor};
use crate::wordpiece::TokenId;

/// Scale applied to the output projection's initial range so that an
/// untrained model predicts an almost uniform distribution.
pub const OUTPUT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: TokenId, vocab: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("{0}")]
    Kernel(#[from] KernelError),
}

/// Where the cell state is clipped relative to the hidden-state computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellVariant {
    /// The cell state is clipped before `h = W_proj (o ⊙ tanh c)`.
    ClipBeforeOutput,
    /// `h` sees the unclipped cell state; only the carried state is clipped.
    ClipAfterOutput,
}

impl CellVariant {
    pub fn short_name(self) -> &'static str {
        match self {
            CellVariant::ClipBeforeOutput => "a",
            CellVariant::ClipAfterOutput => "b",
        }
    }
}

impl fmt::Display for CellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for CellVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "A" | "clip-before-output" => Ok(CellVariant::ClipBeforeOutput),
            "b" | "B" | "clip-after-output" => Ok(CellVariant::ClipAfterOutput),
            _ => Err(format!("unknown cell variant {s:?} (expected a or b)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    /// Embedding and layer width `d`.
    pub width: usize,
    /// Internal cell size per direction before projection.
    pub hidden: usize,
    /// Projection size per direction; `2 * proj == width`.
    pub proj: usize,
    pub vocab: usize,
    pub cell_clip: f64,
    pub proj_clip: f64,
    pub variant: CellVariant,
}

impl ModelConfig {
    /// Desk-scale defaults: d=128, H=512, P=64, L=2.
    pub fn desk(vocab: usize) -> Self {
        Self {
            layers: 2,
            width: 128,
            hidden: 512,
            proj: 64,
            vocab,
            cell_clip: 3.0,
            proj_clip: 3.0,
            variant: CellVariant::ClipAfterOutput,
        }
    }

    /// Small instance used for gradient checks and quick tests.
    pub fn tiny(vocab: usize) -> Self {
        Self { layers: 2, width: 8, hidden: 16, proj: 4, ..Self::desk(vocab) }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if 2 * self.proj != self.width {
            return err(format!("width {} must equal twice the projection {}", self.width, self.proj));
        }
        if self.layers == 0 {
            return err("at least one layer is required".into());
        }
        if self.hidden < self.proj {
            return err(format!("hidden {} smaller than projection {}", self.hidden, self.proj));
        }
        if self.vocab == 0 || self.proj == 0 {
            return err("vocabulary and projection must be non-empty".into());
        }
        if !(self.cell_clip > 0.0 && self.proj_clip > 0.0) {
            return err("clip bounds must be positive".into());
        }
        Ok(())
    }

    pub fn param_count(&self) -> ParamCount {
        let (d, h, p, v) = (self.width, self.hidden, self.proj, self.vocab);
        let per_direction = d * 4 * h + p * 4 * h + 4 * h + h * p + 2 * p;
        ParamCount {
            embedding: v * d,
            recurrent: self.layers * 2 * per_direction,
            output: d * v + v,
        }
    }
}

/// Parameter totals by group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub embedding: usize,
    pub recurrent: usize,
    pub output: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.embedding + self.recurrent + self.output
    }

    /// Count excluding the softmax head (as when it is tied to the embedding).
    pub fn without_output(&self) -> usize {
        self.embedding + self.recurrent
    }
}

/// Weights of one direction of one layer. Gate columns are laid out as
/// `[input | forget | output | candidate]`, each `hidden` wide.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionParams {
    pub w_in: Tensor,
    pub w_rec: Tensor,
    pub bias: Tensor,
    pub w_proj: Tensor,
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub forward: DirectionParams,
    pub backward: DirectionParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embedding: Tensor,
    pub layers: Vec<LayerParams>,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

const DIRECTION_FIELDS: [&str; 6] = ["w_in", "w_rec", "bias", "w_proj", "ln_gamma", "ln_beta"];

impl DirectionParams {
    fn init(cfg: &ModelConfig, rng: &mut crate::rng::StreamRng) -> Self {
        let (d, h, p) = (cfg.width, cfg.hidden, cfg.proj);
        let mut bias = Tensor::zeros(&[4 * h]);
        bias.data_mut()[h..2 * h].fill(1.0);
        Self {
            w_in: uniform_tensor(rng, &[d, 4 * h], (1.0 / d as f64).sqrt()),
            w_rec: uniform_tensor(rng, &[p, 4 * h], (1.0 / p as f64).sqrt()),
            bias,
            w_proj: uniform_tensor(rng, &[h, p], (1.0 / h as f64).sqrt()),
            ln_gamma: Tensor::full(&[p], 1.0),
            ln_beta: Tensor::zeros(&[p]),
        }
    }

    fn fields(&self) -> [&Tensor; 6] {
        [&self.w_in, &self.w_rec, &self.bias, &self.w_proj, &self.ln_gamma, &self.ln_beta]
    }

    fn fields_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w_in,
            &mut self.w_rec,
            &mut self.bias,
            &mut self.w_proj,
            &mut self.ln_gamma,
            &mut self.ln_beta,
        ]
    }
}

impl ModelParams {
    /// Uniform(−s, s) weights with `s = sqrt(1/fan_in)`, forget-gate bias 1,
    /// other biases 0, layer-norm gain 1 and shift 0. The output projection
    /// range is further scaled by [`OUTPUT_INIT_SCALE`].
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = substream(seed, &[tag::INIT]);
        let (d, v) = (config.width, config.vocab);
        let embedding = uniform_tensor(&mut rng, &[v, d], (1.0 / d as f64).sqrt());
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                forward: DirectionParams::init(config, &mut rng),
                backward: DirectionParams::init(config, &mut rng),
            })
            .collect();
        let out_w = uniform_tensor(&mut rng, &[d, v], OUTPUT_INIT_SCALE * (1.0 / d as f64).sqrt());
        Ok(Self { config: config.clone(), embedding, layers, out_w, out_b: Tensor::zeros(&[v]) })
    }

    /// Canonical parameter names, in the order of [`ModelParams::tensors`].
    pub fn names(config: &ModelConfig) -> Vec<String> {
        let mut names = vec!["embedding".to_string()];
        for l in 0..config.layers {
            for dir in ["fwd", "bwd"] {
                names.extend(DIRECTION_FIELDS.iter().map(|f| format!("layer{l}/{dir}/{f}")));
            }
        }
        names.push("output/w".into());
        names.push("output/b".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for layer in &self.layers {
            out.extend(layer.forward.fields());
            out.extend(layer.backward.fields());
        }
        out.push(&self.out_w);
        out.push(&self.out_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.extend(layer.forward.fields_mut());
            out.extend(layer.backward.fields_mut());
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        Self::names(&self.config).into_iter().zip(self.tensors()).collect()
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_named(
        config: &ModelConfig,
        mut lookup: impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<Self, ModelError> {
        let mut params = Self::init(config, 0)?;
        let names = Self::names(config);
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let t = lookup(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.config == other.config
            && self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.bit_eq(b))
    }
}

/// Recurrent state of one direction: `h` is `B × proj`, `c` is `B × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirState {
    pub h: Tensor,
    pub c: Tensor,
}

impl DirState {
    pub fn zeros(cfg: &ModelConfig, batch: usize) -> Self {
        Self { h: Tensor::zeros(&[batch, cfg.proj]), c: Tensor::zeros(&[batch, cfg.hidden]) }
    }

    pub fn bit_eq(&self, other: &DirState) -> bool {
        self.h.bit_eq(&other.h) && self.c.bit_eq(&other.c)
    }
}

/// Per layer `[forward, backward]` states for every batch row.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub layers: Vec<[DirState; 2]>,
}

impl LayerState {
    pub fn zeros(cfg: &ModelConfig, batch: usize) -> Self {
        Self {
            layers: (0..cfg.layers)
                .map(|_| [DirState::zeros(cfg, batch), DirState::zeros(cfg, batch)])
                .collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.layers.first().map_or(0, |l| l[0].h.rows())
    }

    pub fn bit_eq(&self, other: &LayerState) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a[0].bit_eq(&b[0]) && a[1].bit_eq(&b[1]))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|s| s.h.is_finite() && s.c.is_finite())
    }
}

#[cfg(test)]
mod tests;
