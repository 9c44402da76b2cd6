//! The finite-difference verification suite behind `melmo gradcheck`.

use crate::model::{
    bilstm_layer, forward, lstmp_step_a, lstmp_step_b, CellVars, DirState, LayerState, LayerVars, DirectionVars,
    ModelConfig, ModelError, ModelParams, ParamVars, StateVars,
};
use crate::numkernel::{GradCheck, KernelError, OpKind, Tape, Tensor, Var};
use crate::rng::{substream, uniform_tensor, StreamRng};
use crate::trainer::masked_lm_loss;

pub const STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

/// Result of one named check over all its seeds.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub tol: f64,
    pub seeds: usize,
    pub max_rel_error: f64,
    /// Seed, leaf and element of the worst disagreement.
    pub worst: (u64, usize, usize),
    pub passed: bool,
}

type CheckFn = fn(&GradCheck, u64) -> Result<(f64, usize, usize), KernelError>;

struct Check {
    name: &'static str,
    tol: f64,
    seeds: u64,
    run: CheckFn,
}

const CHECKS: &[Check] = &[
    Check { name: "matmul", tol: PRIMITIVE_TOL, seeds: 10, run: matmul },
    Check { name: "add", tol: PRIMITIVE_TOL, seeds: 10, run: add },
    Check { name: "mul", tol: PRIMITIVE_TOL, seeds: 10, run: mul },
    Check { name: "add_row", tol: PRIMITIVE_TOL, seeds: 10, run: add_row },
    Check { name: "scale", tol: PRIMITIVE_TOL, seeds: 10, run: scale },
    Check { name: "sum", tol: PRIMITIVE_TOL, seeds: 10, run: sum },
    Check { name: "sigmoid", tol: PRIMITIVE_TOL, seeds: 10, run: sigmoid },
    Check { name: "tanh", tol: PRIMITIVE_TOL, seeds: 10, run: tanh },
    Check { name: "clip", tol: PRIMITIVE_TOL, seeds: 10, run: clip },
    Check { name: "slice_cols", tol: PRIMITIVE_TOL, seeds: 10, run: slice_cols },
    Check { name: "concat_cols", tol: PRIMITIVE_TOL, seeds: 10, run: concat_cols },
    Check { name: "concat_rows", tol: PRIMITIVE_TOL, seeds: 10, run: concat_rows },
    Check { name: "gather_rows", tol: PRIMITIVE_TOL, seeds: 10, run: gather_rows },
    Check { name: "layer_norm", tol: PRIMITIVE_TOL, seeds: 10, run: layer_norm },
    Check { name: "softmax_xent", tol: PRIMITIVE_TOL, seeds: 10, run: softmax_xent },
    Check { name: "lstmp_step_a", tol: PRIMITIVE_TOL, seeds: 10, run: step_a },
    Check { name: "lstmp_step_b", tol: PRIMITIVE_TOL, seeds: 10, run: step_b },
    Check { name: "bilstm_layer", tol: PRIMITIVE_TOL, seeds: 5, run: layer },
    Check { name: "end_to_end", tol: END_TO_END_TOL, seeds: 3, run: end_to_end },
];

/// Names accepted by [`run_suite`]'s filter, in execution order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

/// Runs every check (or only `only`), with the backward rule of `fault`
/// deliberately corrupted when given.
pub fn run_suite(only: Option<&str>, fault: Option<OpKind>) -> Result<Vec<CheckOutcome>, KernelError> {
    let gc = GradCheck { step: STEP, tol: 0.0, fault };
    let mut out = Vec::new();
    for check in CHECKS.iter().filter(|c| only.is_none_or(|n| n == c.name)) {
        let mut worst = (0.0, (0, 0, 0));
        for seed in 0..check.seeds {
            let (err, leaf, elem) = (check.run)(&gc, seed)?;
            if err >= worst.0 {
                worst = (err, (seed, leaf, elem));
            }
        }
        out.push(CheckOutcome {
            name: check.name,
            tol: check.tol,
            seeds: check.seeds as usize,
            max_rel_error: worst.0,
            worst: worst.1,
            passed: worst.0 < check.tol,
        });
    }
    Ok(out)
}

fn worst<F>(gc: &GradCheck, f: F, leaves: &[Tensor]) -> Result<(f64, usize, usize), KernelError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, KernelError>,
{
    let report = gc.run(f, leaves)?;
    let w = report
        .leaves
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("at least one leaf");
    Ok((w.max_rel_error, w.leaf, w.worst_element))
}

fn rng(seed: u64) -> StreamRng {
    substream(seed, &[0x6c])
}

/// `Σ w ⊙ y` with fixed random weights, so no output's gradient is trivial.
fn weighted(t: &mut Tape, y: Var, seed: u64) -> Result<Var, KernelError> {
    let shape = t.shape(y).to_vec();
    let w = t.constant(uniform_tensor(&mut substream(seed, &[0x77]), &shape, 1.0));
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn matmul(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    let mut r = rng(seed);
    let leaves = [uniform_tensor(&mut r, &[5, 7], 1.0), uniform_tensor(&mut r, &[7, 3], 1.0)];
    worst(gc, |t, v| { let y = t.matmul(v[0], v[1])?; weighted(t, y, seed) }, &leaves)
}

fn pair(seed: u64) -> [Tensor; 2] {
    let mut r = rng(seed);
    [uniform_tensor(&mut r, &[4, 6], 2.0), uniform_tensor(&mut r, &[4, 6], 2.0)]
}

fn add(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    worst(gc, |t, v| { let y = t.add(v[0], v[1])?; weighted(t, y, seed) }, &pair(seed))
}

fn mul(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    worst(gc, |t, v| { let y = t.mul(v[0], v[1])?; weighted(t, y, seed) }, &pair(seed))
}

fn add_row(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    let mut r = rng(seed);
    let leaves = [uniform_tensor(&mut r, &[4, 6], 1.0), uniform_tensor(&mut r, &[6], 1.0)];
    worst(gc, |t, v| { let y = t.add_row(v[0], v[1])?; weighted(t, y, seed) }, &leaves)
}

fn scale(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    worst(gc, |t, v| { let y = t.scale(v[0], -1.7)?; weighted(t, y, seed) }, &pair(seed)[..1])
}

fn sum(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    worst(
        gc,
        |t, v| {
            let y = t.mul(v[0], v[1])?;
            t.sum(y)
        },
        &pair(seed),
    )
}

fn sigmoid(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    worst(gc, |t, v| { let y = t.sigmoid(v[0])?; weighted(t, y, seed) }, &pair(seed)[..1])
}

fn tanh(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    worst(gc, |t, v| { let y = t.tanh(v[0])?; weighted(t, y, seed) }, &pair(seed)[..1])
}

fn clip(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    const C: f64 = 1.0;
    // keep every element clear of the kink so central differences are valid
    let x = pair(seed)[0].map(|v| if (v.abs() - C).abs() < 1e-3 { v * 1.01 } else { v });
    worst(gc, |t, v| { let y = t.clip(v[0], C)?; weighted(t, y, seed) }, &[x])
}

fn slice_cols(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    worst(gc, |t, v| { let y = t.slice_cols(v[0], 2, 3)?; weighted(t, y, seed) }, &pair(seed)[..1])
}

fn concat_cols(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    let mut r = rng(seed);
    let leaves = [uniform_tensor(&mut r, &[3, 2], 1.0), uniform_tensor(&mut r, &[3, 4], 1.0)];
    worst(gc, |t, v| { let y = t.concat_cols(&[v[1], v[0], v[1]])?; weighted(t, y, seed) }, &leaves)
}

fn concat_rows(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    let mut r = rng(seed);
    let leaves = [uniform_tensor(&mut r, &[2, 4], 1.0), uniform_tensor(&mut r, &[3, 4], 1.0)];
    worst(gc, |t, v| { let y = t.concat_rows(&[v[0], v[1], v[0]])?; weighted(t, y, seed) }, &leaves)
}

fn gather_rows(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    worst(gc, |t, v| { let y = t.gather_rows(v[0], &[3, 0, 3, 1, 1])?; weighted(t, y, seed) }, &pair(seed)[..1])
}

fn layer_norm(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    let mut r = rng(seed);
    let leaves = [
        uniform_tensor(&mut r, &[3, 8], 2.0),
        uniform_tensor(&mut r, &[8], 1.5),
        uniform_tensor(&mut r, &[8], 1.0),
    ];
    worst(
        gc,
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], crate::numkernel::LAYER_NORM_EPS)?;
            weighted(t, y, seed)
        },
        &leaves,
    )
}

fn softmax_xent(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    let leaves = [uniform_tensor(&mut rng(seed), &[4, 11], 3.0)];
    let targets = [(seed as usize) % 11, 4, 10, 0];
    worst(gc, |t, v| Ok(t.softmax_xent(v[0], &targets)?.0), &leaves)
}

fn cell_config() -> ModelConfig {
    ModelConfig { layers: 1, width: 6, hidden: 5, proj: 3, vocab: 10, ..ModelConfig::desk(10) }
}

/// Half the seeds start from a cell state beyond the clip bound.
fn cell_leaves(seed: u64) -> Vec<Tensor> {
    let cfg = cell_config();
    let (d, h, p) = (cfg.width, cfg.hidden, cfg.proj);
    let mut r = rng(seed);
    let c_scale = if seed.is_multiple_of(2) { 0.5 } else { 6.0 };
    vec![
        uniform_tensor(&mut r, &[2, d], 1.0),
        uniform_tensor(&mut r, &[2, p], 1.0),
        uniform_tensor(&mut r, &[2, h], c_scale),
        uniform_tensor(&mut r, &[d, 4 * h], 0.5),
        uniform_tensor(&mut r, &[p, 4 * h], 0.5),
        uniform_tensor(&mut r, &[4 * h], 0.5),
        uniform_tensor(&mut r, &[h, p], 0.8),
    ]
}

type StepFn = fn(&mut Tape, Var, StateVars, &CellVars, &ModelConfig) -> Result<StateVars, KernelError>;

fn cell_check(gc: &GradCheck, seed: u64, step: StepFn) -> Result<(f64, usize, usize), KernelError> {
    let cfg = cell_config();
    worst(
        gc,
        |t, v| {
            let cell = CellVars { w_in: v[3], w_rec: v[4], bias: v[5], w_proj: v[6] };
            let out = step(t, v[0], StateVars { h: v[1], c: v[2] }, &cell, &cfg)?;
            let a = weighted(t, out.h, seed)?;
            let b = weighted(t, out.c, seed + 1000)?;
            t.add(a, b)
        },
        &cell_leaves(seed),
    )
}

fn step_a(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    cell_check(gc, seed, lstmp_step_a)
}

fn step_b(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    cell_check(gc, seed, lstmp_step_b)
}

fn model_err(e: ModelError) -> KernelError {
    match e {
        ModelError::Kernel(k) => k,
        other => KernelError::InvalidArgument(other.to_string()),
    }
}

fn layer(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    let cfg = ModelConfig { layers: 1, ..ModelConfig::tiny(20) };
    let params = ModelParams::init(&cfg, seed).map_err(model_err)?;
    let mut r = rng(seed);
    let n = 6;
    let mut leaves = vec![uniform_tensor(&mut r, &[n, cfg.width], 1.0)];
    for dir in [&params.layers[0].forward, &params.layers[0].backward] {
        leaves.extend([&dir.w_in, &dir.w_rec, &dir.bias, &dir.w_proj].map(Tensor::clone));
        leaves.push(uniform_tensor(&mut r, &[cfg.proj], 1.0).map(|g| 1.0 + g));
        leaves.push(uniform_tensor(&mut r, &[cfg.proj], 0.5));
    }
    let init = DirState {
        h: uniform_tensor(&mut r, &[1, cfg.proj], 0.5),
        c: uniform_tensor(&mut r, &[1, cfg.hidden], 0.5),
    };
    worst(
        gc,
        |t, v| {
            let dir = |o: usize| DirectionVars {
                cell: CellVars { w_in: v[o], w_rec: v[o + 1], bias: v[o + 2], w_proj: v[o + 3] },
                ln_gamma: v[o + 4],
                ln_beta: v[o + 5],
            };
            let lv = LayerVars { forward: dir(1), backward: dir(7) };
            let s = StateVars { h: t.constant(init.h.clone()), c: t.constant(init.c.clone()) };
            let out = bilstm_layer(t, v[0], 1, n, [s, s], &lv, &cfg)?;
            weighted(t, out.output, seed)
        },
        &leaves,
    )
}

fn end_to_end(gc: &GradCheck, seed: u64) -> Result<(f64, usize, usize), KernelError> {
    let cfg = ModelConfig::tiny(50);
    let params = ModelParams::init(&cfg, seed).map_err(model_err)?;
    let mut leaves: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    // a larger head than the default init so the loss depends on it noticeably
    let last = leaves.len() - 2;
    leaves[last] = uniform_tensor(&mut rng(seed), leaves[last].shape(), 0.5);
    let n: usize = 8;
    let ids: Vec<u32> = (0..n as u32).map(|i| 5 + ((seed as u32 * 7 + i * 13) % 45)).collect();
    let predicted = [1, 4, 6];
    let targets: Vec<usize> = predicted.iter().map(|&p| ids[p] as usize).collect();
    let mut states = LayerState::zeros(&cfg, 1);
    let mut r = rng(seed + 500);
    for s in states.layers.iter_mut().flatten() {
        s.h = uniform_tensor(&mut r, s.h.shape(), 0.5);
        s.c = uniform_tensor(&mut r, s.c.shape(), 0.5);
    }
    worst(
        gc,
        |t, v| {
            let pv = ParamVars::from_vars(v, cfg.layers);
            let out = forward(t, &pv, &ids, 1, n, &states, &predicted, &cfg).map_err(model_err)?;
            let loss = masked_lm_loss(t, out.logits, &targets)?;
            Ok(loss.loss.expect("positions are predicted"))
        },
        &leaves,
    )
}
