//! Synthetic encyclopedia-style corpus and matching word-piece vocabulary.
//!
//! Documents are built from a fixed lexicon. Each document has a topic that
//! biases its content words and a few invented entity names that recur
//! throughout it. Entity names are spelled from syllable pieces, inflected
//! words carry suffix pieces and years are split into digit pieces, so the
//! text exercises continuation pieces the way real word-piece text does.
//! Predicting a masked entity piece usually needs context from far back in
//! the document, which makes the corpus sensitive to context length.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::rng::{substream, tag, StreamRng};
use crate::wordpiece::{Vocab, CLS, MASK, PAD, SEP, UNK};

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
const PUNCTUATION: &[&str] = &[".", ","];
const FUNCTION_WORDS: &[&str] = &[
    "the", "The", "a", "of", "in", "In", "was", "were", "is", "and", "with", "its", "which", "It", "by", "during",
    "After", "after", "to", "from", "for", "has", "had", "been", "that", "as", "on", "their", "also",
];
const SUFFIXES: &[&str] = &["##s", "##ed", "##ing"];

#[derive(Clone, Debug)]
pub struct SynthConfig {
    /// Generation stops once this many tokens (including `[CLS]`/`[SEP]`) exist.
    pub target_tokens: usize,
    pub topics: usize,
    pub nouns_per_topic: usize,
    pub verbs_per_topic: usize,
    pub adjectives_per_topic: usize,
    /// Topic-neutral words of each class.
    pub shared_words: usize,
    /// Inclusive range of sentences per document.
    pub sentences: (usize, usize),
    pub entities_per_document: usize,
    /// Probability that a content word comes from the document's topic.
    pub topic_affinity: f64,
    pub lexicon_seed: u64,
    pub text_seed: u64,
}

impl SynthConfig {
    pub fn new(target_tokens: usize, text_seed: u64) -> Self {
        Self {
            target_tokens,
            topics: 24,
            nouns_per_topic: 12,
            verbs_per_topic: 8,
            adjectives_per_topic: 6,
            shared_words: 10,
            sentences: (10, 40),
            entities_per_document: 3,
            topic_affinity: 0.85,
            lexicon_seed: 0,
            text_seed,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct WordClass {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjectives: Vec<String>,
}

#[derive(Clone, Debug)]
struct Lexicon {
    topics: Vec<WordClass>,
    shared: WordClass,
    syllables: Vec<String>,
}

fn syllables() -> Vec<String> {
    CONSONANTS
        .iter()
        .flat_map(|c| VOWELS.iter().map(move |v| format!("{c}{v}")))
        .collect()
}

fn build_lexicon(cfg: &SynthConfig) -> Lexicon {
    let mut rng = substream(cfg.lexicon_seed, &[tag::LEXICON]);
    let syl = syllables();
    let mut used: HashSet<String> = FUNCTION_WORDS.iter().map(|w| w.to_string()).collect();
    let mut fresh = |rng: &mut StreamRng| loop {
        let w = format!("{}{}", syl.choose(rng).unwrap(), syl.choose(rng).unwrap());
        if used.insert(w.clone()) {
            return w;
        }
    };
    let mut class = |rng: &mut StreamRng, n: usize, v: usize, a: usize| WordClass {
        nouns: (0..n).map(|_| fresh(rng)).collect(),
        verbs: (0..v).map(|_| fresh(rng)).collect(),
        adjectives: (0..a).map(|_| fresh(rng)).collect(),
    };
    let topics = (0..cfg.topics)
        .map(|_| class(&mut rng, cfg.nouns_per_topic, cfg.verbs_per_topic, cfg.adjectives_per_topic))
        .collect();
    let shared = class(&mut rng, cfg.shared_words, cfg.shared_words, cfg.shared_words);
    Lexicon { topics, shared, syllables: syl }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn vocab_tokens(lex: &Lexicon) -> Vec<String> {
    let mut toks: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    toks.extend(PUNCTUATION.iter().map(|s| s.to_string()));
    toks.extend(FUNCTION_WORDS.iter().map(|s| s.to_string()));
    toks.extend(SUFFIXES.iter().map(|s| s.to_string()));
    toks.extend((0..10).map(|d| d.to_string()));
    toks.extend((0..10).map(|d| format!("##{d}")));
    toks.extend(lex.syllables.iter().map(|s| capitalize(s)));
    toks.extend(lex.syllables.iter().map(|s| format!("##{s}")));
    for class in lex.topics.iter().chain(std::iter::once(&lex.shared)) {
        toks.extend(class.nouns.iter().cloned());
        toks.extend(class.verbs.iter().cloned());
        toks.extend(class.adjectives.iter().cloned());
    }
    toks
}

/// A generated corpus: documents of sentences, each sentence a piece list.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub vocab: Vocab,
    pub documents: Vec<Vec<Vec<String>>>,
}

struct DocContext<'a> {
    lex: &'a Lexicon,
    topic: &'a WordClass,
    affinity: f64,
    entities: Vec<Vec<String>>,
}

impl DocContext<'_> {
    fn pick(&self, rng: &mut StreamRng, f: fn(&WordClass) -> &Vec<String>) -> String {
        let pool = if rng.random_bool(self.affinity) { f(self.topic) } else { f(&self.lex.shared) };
        pool.choose(rng).expect("non-empty word class").clone()
    }

    fn noun(&self, rng: &mut StreamRng, out: &mut Vec<String>) {
        out.push(self.pick(rng, |c| &c.nouns));
    }

    fn nouns(&self, rng: &mut StreamRng, out: &mut Vec<String>) {
        self.noun(rng, out);
        out.push("##s".into());
    }

    fn verb(&self, rng: &mut StreamRng, out: &mut Vec<String>, suffix: &str) {
        out.push(self.pick(rng, |c| &c.verbs));
        out.push(suffix.into());
    }

    fn adjective(&self, rng: &mut StreamRng, out: &mut Vec<String>) {
        out.push(self.pick(rng, |c| &c.adjectives));
    }

    fn entity(&self, rng: &mut StreamRng, out: &mut Vec<String>) {
        // the first entity is the document's subject
        let e = if rng.random_bool(0.6) { &self.entities[0] } else { self.entities.choose(rng).unwrap() };
        out.extend(e.iter().cloned());
    }

    fn year(rng: &mut StreamRng, out: &mut Vec<String>) {
        let y = rng.random_range(1700..2020).to_string();
        for (i, d) in y.chars().enumerate() {
            out.push(if i == 0 { d.to_string() } else { format!("##{d}") });
        }
    }

    fn words(out: &mut Vec<String>, ws: &[&str]) {
        out.extend(ws.iter().map(|w| w.to_string()));
    }

    fn sentence(&self, rng: &mut StreamRng) -> Vec<String> {
        let mut s = Vec::new();
        match rng.random_range(0..8) {
            0 => {
                self.entity(rng, &mut s);
                Self::words(&mut s, &["was", "a"]);
                self.adjective(rng, &mut s);
                self.noun(rng, &mut s);
                Self::words(&mut s, &["of", "the"]);
                self.noun(rng, &mut s);
            }
            1 => {
                Self::words(&mut s, &["The"]);
                self.adjective(rng, &mut s);
                self.nouns(rng, &mut s);
                self.verb(rng, &mut s, "##ed");
                Self::words(&mut s, &["the"]);
                self.noun(rng, &mut s);
                Self::words(&mut s, &["in"]);
                Self::year(rng, &mut s);
            }
            2 => {
                Self::words(&mut s, &["In"]);
                Self::year(rng, &mut s);
                Self::words(&mut s, &[","]);
                self.entity(rng, &mut s);
                self.verb(rng, &mut s, "##ed");
                Self::words(&mut s, &["a"]);
                self.noun(rng, &mut s);
                Self::words(&mut s, &["with", "its"]);
                self.adjective(rng, &mut s);
                self.nouns(rng, &mut s);
            }
            3 => {
                self.entity(rng, &mut s);
                self.verb(rng, &mut s, "##s");
                Self::words(&mut s, &["the"]);
                self.nouns(rng, &mut s);
                Self::words(&mut s, &[",", "which", "were"]);
                self.adjective(rng, &mut s);
            }
            4 => {
                Self::words(&mut s, &["It", "was"]);
                self.verb(rng, &mut s, "##ed");
                Self::words(&mut s, &["by"]);
                self.entity(rng, &mut s);
                Self::words(&mut s, &["during", "the"]);
                self.noun(rng, &mut s);
            }
            5 => {
                Self::words(&mut s, &["The"]);
                self.noun(rng, &mut s);
                Self::words(&mut s, &["of"]);
                self.entity(rng, &mut s);
                Self::words(&mut s, &["is"]);
                self.adjective(rng, &mut s);
                Self::words(&mut s, &["and"]);
                self.adjective(rng, &mut s);
            }
            6 => {
                Self::words(&mut s, &["After", "the"]);
                self.noun(rng, &mut s);
                Self::words(&mut s, &[","]);
                self.entity(rng, &mut s);
                Self::words(&mut s, &["had", "been"]);
                self.verb(rng, &mut s, "##ing");
                Self::words(&mut s, &["the"]);
                self.nouns(rng, &mut s);
                Self::words(&mut s, &["of"]);
                self.entity(rng, &mut s);
            }
            _ => {
                self.entity(rng, &mut s);
                Self::words(&mut s, &["has", "also"]);
                self.verb(rng, &mut s, "##ed");
                Self::words(&mut s, &["their"]);
                self.adjective(rng, &mut s);
                self.noun(rng, &mut s);
                Self::words(&mut s, &["from", "the"]);
                self.nouns(rng, &mut s);
            }
        }
        s.push(".".into());
        s
    }
}

fn entity_name(lex: &Lexicon, rng: &mut StreamRng) -> Vec<String> {
    let len = rng.random_range(2..=3);
    (0..len)
        .map(|i| {
            let s = lex.syllables.choose(rng).unwrap();
            if i == 0 { capitalize(s) } else { format!("##{s}") }
        })
        .collect()
}

/// Generates documents until `cfg.target_tokens` is reached.
pub fn generate(cfg: &SynthConfig) -> SyntheticCorpus {
    let lex = build_lexicon(cfg);
    let vocab = Vocab::from_tokens(vocab_tokens(&lex)).expect("generated vocabulary is valid");
    let mut rng = substream(cfg.text_seed, &[tag::TEXT]);
    let mut documents = Vec::new();
    let mut tokens = 0;
    while tokens < cfg.target_tokens {
        let topic = &lex.topics[rng.random_range(0..lex.topics.len())];
        let entities = (0..cfg.entities_per_document.max(1)).map(|_| entity_name(&lex, &mut rng)).collect();
        let ctx = DocContext { lex: &lex, topic, affinity: cfg.topic_affinity, entities };
        let n = rng.random_range(cfg.sentences.0..=cfg.sentences.1.max(cfg.sentences.0));
        let doc: Vec<Vec<String>> = (0..n).map(|_| ctx.sentence(&mut rng)).collect();
        tokens += 1 + doc.iter().map(|s| s.len() + 1).sum::<usize>();
        documents.push(doc);
    }
    SyntheticCorpus { vocab, documents }
}

fn render(pieces: &[String]) -> String {
    let mut out = String::new();
    for p in pieces {
        match p.strip_prefix("##") {
            Some(rest) => out.push_str(rest),
            None => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(p);
            }
        }
    }
    out
}

impl SyntheticCorpus {
    /// Token count after encoding, including `[CLS]` and `[SEP]`.
    pub fn token_count(&self) -> usize {
        self.documents.iter().map(|d| 1 + d.iter().map(|s| s.len() + 1).sum::<usize>()).sum()
    }

    /// Corpus file text: one sentence per line, blank line between documents.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, doc) in self.documents.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for s in doc {
                out.push_str(&render(s));
                out.push('\n');
            }
        }
        out
    }

    /// Writes `corpus.txt` and `vocab.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> io::Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let corpus = dir.join("corpus.txt");
        let vocab = dir.join("vocab.txt");
        fs::write(&corpus, self.text())?;
        fs::write(&vocab, self.vocab.to_file_string())?;
        Ok((corpus, vocab))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;
    use crate::wordpiece::tokenize;

    #[test]
    fn text_tokenizes_back_to_the_generated_pieces() {
        let c = generate(&SynthConfig::new(5_000, 3));
        for doc in &c.documents {
            for s in doc {
                let ids = tokenize(&render(s), &c.vocab);
                let pieces: Vec<&str> = ids.iter().map(|&i| c.vocab.token(i).unwrap()).collect();
                assert_eq!(pieces, s.iter().map(String::as_str).collect::<Vec<_>>());
            }
        }
        let ds = parse_corpus(&c.text(), &c.vocab).unwrap();
        assert_eq!(ds.len(), c.documents.len());
        assert_eq!(ds.token_count(), c.token_count());
        assert!(c.token_count() >= 5_000);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&SynthConfig::new(3_000, 9));
        let b = generate(&SynthConfig::new(3_000, 9));
        assert_eq!(a.text(), b.text());
        let c = generate(&SynthConfig::new(3_000, 10));
        assert_ne!(a.text(), c.text());
        assert_eq!(a.vocab.tokens(), c.vocab.tokens());
    }
}
