//! Per-layer representations of a sentence and their scalar mix.

use melmo::model::{represent, scalar_mix, ModelConfig, ModelParams};
use melmo::wordpiece::{load_vocab, tokenize};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = load_vocab(concat!(env!("CARGO_MANIFEST_DIR"), "/testdata/mini.vocab"))?;
    let params = ModelParams::init(&ModelConfig { width: 16, hidden: 32, proj: 8, ..ModelConfig::tiny(vocab.len()) }, 1)?;
    let ids = tokenize("The players were walking in the city.", &vocab);
    let reps = represent(&params, &ids)?;
    println!("{} positions, {} layers of width {}", reps.positions(), reps.layers.len(), reps.width());

    // a task would learn these; here the top layer is favoured
    let mixed = scalar_mix(&reps, &[0.0, 0.5, 1.0], 1.0)?;
    for (k, id) in ids.iter().enumerate() {
        let per_layer: Vec<String> = reps.at(k).iter().map(|v| format!("{:6.2}", norm(v))).collect();
        println!("{:>10}  |h| per layer {}  |mix| {:6.2}", vocab.token(*id).unwrap_or("?"), per_layer.join(" "), norm(mixed.row(k)));
    }
    Ok(())
}
