use crate::corpus::Direction;
use crate::numkernel::{KernelError, Tape, Var};

use super::{CellVariant, ModelConfig};

/// Tape handles of one direction's cell weights.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub w_in: Var,
    pub w_rec: Var,
    pub bias: Var,
    pub w_proj: Var,
}

/// Tape handles of a recurrent state (`h`: `B × P`, `c`: `B × H`).
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
}

/// One step given the input contribution `zx = x·W_in + b` (`B × 4H`).
fn step_projected(
    tape: &mut Tape,
    zx: Var,
    prev: StateVars,
    cell: &CellVars,
    cfg: &ModelConfig,
) -> Result<StateVars, KernelError> {
    let h = cfg.hidden;
    let zr = tape.matmul(prev.h, cell.w_rec)?;
    let z = tape.add(zx, zr)?;
    let sig_pre = tape.slice_cols(z, 0, 3 * h)?;
    let sig = tape.sigmoid(sig_pre)?;
    let g_pre = tape.slice_cols(z, 3 * h, h)?;
    let g = tape.tanh(g_pre)?;
    let i = tape.slice_cols(sig, 0, h)?;
    let f = tape.slice_cols(sig, h, h)?;
    let o = tape.slice_cols(sig, 2 * h, h)?;
    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let (c_out, c_carry) = match cfg.variant {
        CellVariant::ClipBeforeOutput => {
            let cc = tape.clip(c, cfg.cell_clip)?;
            (cc, cc)
        }
        CellVariant::ClipAfterOutput => (c, c),
    };
    let act = tape.tanh(c_out)?;
    let gated = tape.mul(o, act)?;
    let projected = tape.matmul(gated, cell.w_proj)?;
    let h_new = tape.clip(projected, cfg.proj_clip)?;
    let c_new = match cfg.variant {
        CellVariant::ClipBeforeOutput => c_carry,
        CellVariant::ClipAfterOutput => tape.clip(c_carry, cfg.cell_clip)?,
    };
    Ok(StateVars { h: h_new, c: c_new })
}

/// One projected-LSTM step for a `B × d` input with the configured variant.
pub fn lstmp_step(
    tape: &mut Tape,
    x: Var,
    prev: StateVars,
    cell: &CellVars,
    cfg: &ModelConfig,
) -> Result<StateVars, KernelError> {
    let zx = tape.matmul(x, cell.w_in)?;
    let zx = tape.add_row(zx, cell.bias)?;
    step_projected(tape, zx, prev, cell, cfg)
}

/// Cell state clipped before it feeds the hidden state.
pub fn lstmp_step_a(
    tape: &mut Tape,
    x: Var,
    prev: StateVars,
    cell: &CellVars,
    cfg: &ModelConfig,
) -> Result<StateVars, KernelError> {
    let cfg = ModelConfig { variant: CellVariant::ClipBeforeOutput, ..cfg.clone() };
    lstmp_step(tape, x, prev, cell, &cfg)
}

/// Hidden state computed from the unclipped cell state; the carried cell
/// state is clipped afterwards.
pub fn lstmp_step_b(
    tape: &mut Tape,
    x: Var,
    prev: StateVars,
    cell: &CellVars,
    cfg: &ModelConfig,
) -> Result<StateVars, KernelError> {
    let cfg = ModelConfig { variant: CellVariant::ClipAfterOutput, ..cfg.clone() };
    lstmp_step(tape, x, prev, cell, &cfg)
}

/// Scans `inputs` (`B·N × d`, row `b·N + t`) in one direction.
///
/// Returns the per-position hidden states in the same row layout and the
/// final state in scan order (position `N` forward, position 1 backward).
#[allow(clippy::too_many_arguments)]
pub fn run_direction(
    tape: &mut Tape,
    inputs: Var,
    batch: usize,
    seq_len: usize,
    init: StateVars,
    cell: &CellVars,
    direction: Direction,
    cfg: &ModelConfig,
) -> Result<(Var, StateVars), KernelError> {
    let zx = tape.matmul(inputs, cell.w_in)?;
    let zx = tape.add_row(zx, cell.bias)?;
    let mut state = init;
    let mut outputs = vec![None; seq_len];
    let order: Box<dyn Iterator<Item = usize>> = match direction {
        Direction::Forward => Box::new(0..seq_len),
        Direction::Reverse => Box::new((0..seq_len).rev()),
    };
    let mut rows = vec![0; batch];
    for t in order {
        for (b, r) in rows.iter_mut().enumerate() {
            *r = b * seq_len + t;
        }
        let zx_t = if seq_len == 1 { zx } else { tape.gather_rows(zx, &rows)? };
        state = step_projected(tape, zx_t, state, cell, cfg)?;
        outputs[t] = Some(state.h);
    }
    let outputs: Vec<Var> = outputs.into_iter().map(|o| o.expect("every position visited")).collect();
    if seq_len == 1 {
        return Ok((outputs[0], state));
    }
    // time-major rows t·B + b back to b·N + t
    let stacked = tape.concat_rows(&outputs)?;
    let perm: Vec<usize> = (0..batch)
        .flat_map(|b| (0..seq_len).map(move |t| t * batch + b))
        .collect();
    let out = if batch == 1 { stacked } else { tape.gather_rows(stacked, &perm)? };
    Ok((out, state))
}
