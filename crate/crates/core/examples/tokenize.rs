//! Greedy longest-match wordpiece tokenization with a small vocabulary.
//!
//! cargo run --example tokenize -- "The unaffable reader's book."

use melmo::wordpiece::{detokenize, encode_document, load_vocab, tokenize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = load_vocab(concat!(env!("CARGO_MANIFEST_DIR"), "/testdata/mini.vocab"))?;
    let text = std::env::args().nth(1).unwrap_or_else(|| "The players were walking to the city.".into());
    let ids = tokenize(&text, &vocab);
    println!("{} pieces from a vocabulary of {}", ids.len(), vocab.len());
    for id in &ids {
        println!("{id:>5}  {}", vocab.token(*id).unwrap_or("?"));
    }
    println!("detokenized: {}", detokenize(&ids, &vocab));

    let doc = encode_document(&[text.as_str(), "It was played at home."], &vocab);
    println!("as a document: {}", detokenize(&doc, &vocab));
    Ok(())
}
