//! Disjoint mask sets for mask accumulation, and 80/10/10 corruption.

use melmo::masking::{apply_mask_plan, sample_mask_sets, MaskAction};
use melmo::rng::substream;
use melmo::wordpiece::{detokenize, encode_document, load_vocab, TokenSequence};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = load_vocab(concat!(env!("CARGO_MANIFEST_DIR"), "/testdata/mini.vocab"))?;
    let sentences = [
        "The old man was walking to the city with his dog.",
        "It was raining, and the streets were empty.",
        "He had not seen the river in a long time.",
    ];
    let seq = TokenSequence::new(encode_document(&sentences, &vocab), &vocab);
    let eligible = seq.eligible_positions().len();
    println!("{} tokens, {eligible} eligible for prediction", seq.len());

    let (rate, k) = (0.15, 4);
    let family = sample_mask_sets(&seq, rate, k, &mut substream(7, &[1]))?;
    let mut rng = substream(7, &[2]);
    for (j, plan) in family.plans.iter().enumerate() {
        let corrupted = apply_mask_plan(&seq, plan, &vocab, &mut rng)?;
        println!(
            "\nset {j}: positions {:?}\n  [MASK] {}  random {}  kept {}\n  {}",
            plan.positions,
            plan.count(MaskAction::Mask),
            plan.count(MaskAction::RandomReplace),
            plan.count(MaskAction::Keep),
            detokenize(&corrupted.ids, &vocab)
        );
    }
    let covered: usize = family.plans.iter().map(|p| p.len()).sum();
    println!("\n{k} sets cover {covered} of {eligible} eligible positions, none twice");
    Ok(())
}
