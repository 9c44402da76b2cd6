//! Pretrains a small model on a generated corpus, checkpoints it, and
//! checks that evaluation after reloading is bit-identical.
//!
//! cargo run --release --example tiny_pretrain

use std::sync::Arc;

use melmo::corpus::{parse_corpus, segment_stream, Segment};
use melmo::model::{ModelConfig, ModelParams};
use melmo::synth::{generate, SynthConfig};
use melmo::trainer::{
    eval_perplexity, load_checkpoint, pretrain, save_checkpoint, Checkpoint, EvalSettings, OptimState, TrainRunConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SynthConfig::new(60_000, 1));
    let vocab = corpus.vocab.clone();
    let docs = parse_corpus(&corpus.text(), &vocab)?;
    let held = docs.len() / 10;
    let (train, dev) = docs.split_tail(held);
    println!("{} training documents ({} tokens), {} held out", train.len(), train.token_count(), held);

    let model = ModelConfig { width: 32, hidden: 64, proj: 16, ..ModelConfig::desk(vocab.len()) };
    let run = TrainRunConfig { epochs: 3, seq_len: 32, batch: 8, lr: 3e-3, ..TrainRunConfig::default() };
    let dev: Arc<[Segment]> = segment_stream(&dev, run.seq_len, vocab.special().pad)?.into();

    let mut params = ModelParams::init(&model, run.seed)?;
    let mut opt = OptimState::new(params.tensors(), run.lr, run.decay);
    let settings = EvalSettings::from_run(&run);
    let before = eval_perplexity(dev.clone(), &params, &vocab, &settings)?;
    println!("untrained: perplexity {:.1} (vocabulary {})", before.perplexity, vocab.len());

    pretrain(&mut params, &mut opt, &train, Some(dev.clone()), &vocab, &run, |r| {
        println!(
            "epoch {}: train {:.2}  dev {:.2}  {:.0} tokens/s",
            r.epoch + 1,
            r.train_loss.exp(),
            r.dev.as_ref().map_or(f64::NAN, |d| d.perplexity),
            r.tokens_per_sec
        );
    })?;

    let path = std::env::temp_dir().join("melmo-tiny.ckpt");
    let ck = Checkpoint { params, optim: Some(opt), meta: Default::default() };
    save_checkpoint(&ck, &path)?;
    let loaded = load_checkpoint(&path)?;
    let a = eval_perplexity(dev.clone(), &ck.params, &vocab, &settings)?;
    let b = eval_perplexity(dev, &loaded.params, &vocab, &settings)?;
    println!("reloaded from {}: {} == {}: {}", path.display(), a.perplexity, b.perplexity, a.perplexity == b.perplexity);
    Ok(())
}
