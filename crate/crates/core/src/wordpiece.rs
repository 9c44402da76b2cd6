//! Word-piece vocabularies and greedy longest-match-first tokenization.
//!
//! Vocabulary files are UTF-8, one token per line, and a token's id is its
//! zero-based line number. Continuation pieces carry a `##` prefix.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub type TokenId = u32;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const CONTINUATION: &str = "##";

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("cannot read vocabulary {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("vocabulary is empty")]
    Empty,
    #[error("empty token at line {0}")]
    EmptyToken(usize),
    #[error("duplicate token {token:?} at line {line}")]
    Duplicate { token: String, line: usize },
    #[error("missing special token {0}")]
    MissingSpecial(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: TokenId,
    pub unk: TokenId,
    pub cls: TokenId,
    pub sep: TokenId,
    pub mask: TokenId,
}

/// Bijective token ↔ id map with the five special tokens resolved.
#[derive(Clone, Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    special: SpecialIds,
    max_piece_chars: usize,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut max_piece_chars = 0;
        for (line, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(VocabError::EmptyToken(line + 1));
            }
            if index.insert(tok.clone(), line as TokenId).is_some() {
                return Err(VocabError::Duplicate { token: tok.clone(), line: line + 1 });
            }
            max_piece_chars = max_piece_chars.max(tok.strip_prefix(CONTINUATION).unwrap_or(tok).chars().count());
        }
        let find = |name: &'static str| index.get(name).copied().ok_or(VocabError::MissingSpecial(name));
        let special = SpecialIds {
            pad: find(PAD)?,
            unk: find(UNK)?,
            cls: find(CLS)?,
            sep: find(SEP)?,
            mask: find(MASK)?,
        };
        Ok(Self { tokens, index, special, max_piece_chars })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[CLS]`, `[SEP]`, and `[PAD]` never take part in masking or loss.
    pub fn is_structural(&self, id: TokenId) -> bool {
        let s = self.special;
        id == s.cls || id == s.sep || id == s.pad
    }

    /// Any of the five special tokens.
    pub fn is_special(&self, id: TokenId) -> bool {
        let s = self.special;
        self.is_structural(id) || id == s.unk || id == s.mask
    }

    /// Serialized vocabulary file contents.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocab, VocabError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| VocabError::Io { path: path.display().to_string(), source })?;
    Vocab::from_tokens(text.lines())
}

/// Encoded ids plus a flag for every `[CLS]`/`[SEP]`/`[PAD]` position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub special_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, vocab: &Vocab) -> Self {
        let special_mask = ids.iter().map(|&i| vocab.is_structural(i)).collect();
        Self { ids, special_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions that may be masked and predicted.
    pub fn eligible_positions(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| !self.special_mask[i]).collect()
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Splits on whitespace and isolates punctuation characters. Case is kept.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in word.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    out.push(&word[start..i]);
                }
                out.push(&word[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < word.len() {
            out.push(&word[start..]);
        }
    }
    out
}

/// Greedy longest-match-first segmentation of one word. Falls back to a
/// single `[UNK]` when the word cannot be fully covered.
pub fn tokenize_word(word: &str, vocab: &Vocab) -> Vec<TokenId> {
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    let byte_at = |ci: usize| chars.get(ci).map_or(word.len(), |&(b, _)| b);
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut end = chars.len().min(start + vocab.max_piece_chars);
        let mut found = None;
        while end > start {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.push_str(&word[byte_at(start)..byte_at(end)]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => pieces.push(id),
            None => return vec![vocab.special.unk],
        }
        start = end;
    }
    pieces
}

/// Word pieces of free text, without special tokens.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    pre_tokenize(text).into_iter().flat_map(|w| tokenize_word(w, vocab)).collect()
}

/// One paragraph: `[CLS]`, then each sentence's pieces followed by `[SEP]`.
/// Blank sentences are skipped; a document without text encodes to nothing.
pub fn encode_document<S: AsRef<str>>(sentences: &[S], vocab: &Vocab) -> Vec<TokenId> {
    let mut out = Vec::new();
    for sentence in sentences {
        let pieces = tokenize(sentence.as_ref(), vocab);
        if pieces.is_empty() {
            continue;
        }
        if out.is_empty() {
            out.push(vocab.special.cls);
        }
        out.extend(pieces);
        out.push(vocab.special.sep);
    }
    out
}

/// Joins pieces back into whitespace-separated words, dropping specials.
pub fn detokenize(ids: &[TokenId], vocab: &Vocab) -> String {
    let mut out = String::new();
    for &id in ids {
        if vocab.is_structural(id) {
            continue;
        }
        let Some(tok) = vocab.token(id) else { continue };
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Vocab {
        Vocab::from_tokens([
            PAD, UNK, CLS, SEP, MASK, "play", "##ing", "##s", "the", "cat", "p", "##l", "##a", "##y", ",", ".",
        ])
        .unwrap()
    }

    #[test]
    fn specials_only() {
        let v = Vocab::from_tokens([PAD, UNK, CLS, SEP, MASK]).unwrap();
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn missing_special_and_duplicates() {
        let err = Vocab::from_tokens([PAD, UNK, CLS, SEP]).unwrap_err();
        assert!(err.to_string().contains("missing special token"));
        assert!(matches!(
            Vocab::from_tokens([PAD, UNK, CLS, SEP, MASK, PAD]),
            Err(VocabError::Duplicate { .. })
        ));
        assert!(matches!(Vocab::from_tokens(Vec::<String>::new()), Err(VocabError::Empty)));
    }

    #[test]
    fn greedy_longest_match() {
        let v = small();
        let ids = tokenize_word("playing", &v);
        assert_eq!(ids, vec![v.id("play").unwrap(), v.id("##ing").unwrap()]);
        assert_eq!(tokenize_word("cat", &v), vec![v.id("cat").unwrap()]);
        assert_eq!(tokenize_word("plays", &v).len(), 2);
        assert_eq!(tokenize_word("c@t", &v), vec![v.special().unk]);
        assert_eq!(tokenize_word("dog", &v), vec![v.special().unk]);
    }

    #[test]
    fn encode_two_sentence_paragraph() {
        let v = small();
        let ids = encode_document(&["the cat", "playing ."], &v);
        let s = v.special();
        let expect = vec![
            s.cls,
            v.id("the").unwrap(),
            v.id("cat").unwrap(),
            s.sep,
            v.id("play").unwrap(),
            v.id("##ing").unwrap(),
            v.id(".").unwrap(),
            s.sep,
        ];
        assert_eq!(ids, expect);
        assert!(encode_document::<&str>(&[], &v).is_empty());
        assert!(encode_document(&["   "], &v).is_empty());
    }

    #[test]
    fn punctuation_is_split() {
        assert_eq!(pre_tokenize("Hello, world.  (ok)"), vec!["Hello", ",", "world", ".", "(", "ok", ")"]);
    }

    #[test]
    fn sequence_marks_structural_positions() {
        let v = small();
        let seq = TokenSequence::new(encode_document(&["the cat"], &v), &v);
        assert_eq!(seq.special_mask, vec![true, false, false, true]);
        assert_eq!(seq.eligible_positions(), vec![1, 2]);
    }

    proptest::proptest! {
        #[test]
        fn coverable_words_round_trip(words in proptest::collection::vec("p[lay]{0,12}", 1..10)) {
            let v = small();
            let text = words.join(" ");
            let ids = tokenize(&text, &v);
            proptest::prop_assert!(!ids.contains(&v.special().unk));
            proptest::prop_assert_eq!(detokenize(&ids, &v), text);
        }

        #[test]
        fn ids_stay_in_vocab(text in "\\PC{0,60}") {
            let v = small();
            let doc = encode_document(&[text.as_str()], &v);
            proptest::prop_assert!(doc.iter().all(|&id| (id as usize) < v.len()));
            if let Some(&first) = doc.first() {
                proptest::prop_assert_eq!(first, v.special().cls);
                proptest::prop_assert_eq!(*doc.last().unwrap(), v.special().sep);
            }
        }
    }
}
