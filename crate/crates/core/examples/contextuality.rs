//! Perturbs one token and reports which hidden states change.
//!
//! The first layer's forward direction only sees the left context, so its
//! outputs before the perturbed position stay put. The second layer sees
//! both directions of the first layer and is fully contextual.

use melmo::model::{forward, LayerState, ModelConfig, ModelParams, ParamVars};
use melmo::numkernel::{Tape, Tensor};

fn hidden(params: &ModelParams, ids: &[u32]) -> Result<(Tensor, Tensor, Tensor), Box<dyn std::error::Error>> {
    let cfg = &params.config;
    let mut tape = Tape::new();
    let pv = ParamVars::attach(&mut tape, params, false);
    let out = forward(&mut tape, &pv, ids, 1, ids.len(), &LayerState::zeros(cfg, 1), &[], cfg)?;
    let l1 = &out.layers[0];
    Ok((
        tape.value(l1.forward_hidden).clone(),
        tape.value(l1.backward_hidden).clone(),
        tape.value(out.layers[1].output).clone(),
    ))
}

fn changed(a: &Tensor, b: &Tensor) -> String {
    (0..a.rows())
        .map(|t| if a.row(t) == b.row(t) { '.' } else { '#' })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig { width: 16, hidden: 32, proj: 8, ..ModelConfig::tiny(40) };
    let params = ModelParams::init(&cfg, 3)?;
    let ids: Vec<u32> = (0..12).map(|i| 5 + (i * 7) % 35).collect();
    let mut perturbed = ids.clone();
    let at = 6;
    perturbed[at] = 5 + (perturbed[at] + 11) % 35;

    let (f0, b0, o0) = hidden(&params, &ids)?;
    let (f1, b1, o1) = hidden(&params, &perturbed)?;
    println!("token {at} replaced; '#' marks positions whose vectors changed\n");
    println!("layer 1 forward   {}", changed(&f0, &f1));
    println!("layer 1 backward  {}", changed(&b0, &b1));
    println!("layer 2 output    {}", changed(&o0, &o1));
    Ok(())
}
