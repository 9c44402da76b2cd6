//! A reduced BTBPTT ablation: two arms, three seeds, mean ± std perplexity.
//!
//! cargo run --release --example ablation

use melmo::cli::{ablate, Grid, Splits};
use melmo::corpus::parse_corpus;
use melmo::model::ModelConfig;
use melmo::synth::{generate, SynthConfig};
use melmo::trainer::TrainRunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SynthConfig::new(40_000, 1));
    let vocab = corpus.vocab.clone();
    let docs = parse_corpus(&corpus.text(), &vocab)?;
    let held = docs.len() / 10;
    let splits = Splits::from_tail(docs, held);
    let model = ModelConfig { width: 16, hidden: 32, proj: 8, ..ModelConfig::desk(vocab.len()) };
    let base = TrainRunConfig { epochs: 2, mask_accum: 1, lr: 3e-3, ..TrainRunConfig::default() };
    let rows = ablate::run_grid(&splits, &vocab, &model, &base, &Grid::Btbptt.cells(), &[1, 2, 3], |r| {
        println!("{} seed {}: dev {:.3}", r.cell, r.seed, r.dev);
    })?;
    print!("\n{}", ablate::format_table(&rows));
    Ok(())
}
