//! Corpus ingestion, document shuffling, fixed-length segmentation, and the
//! per-row stream schedule for (bidirectional) truncated BPTT.
//!
//! Corpus files hold one sentence per line; a blank line ends a document.
//! Each batch row owns a contiguous slice of the segment list and walks it
//! either in corpus order or in reverse, so recurrent state carried from one
//! batch to the next always comes from the adjacent segment.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::rng::{substream, tag};
use crate::wordpiece::{encode_document, TokenId, TokenSequence, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corpus contains zero documents")]
    ZeroDocuments,
    #[error("segment length must be at least 3, got {0}")]
    SegmentTooShort(usize),
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("{segments} segments cannot fill {rows} batch rows")]
    TooFewSegments { segments: usize, rows: usize },
    #[error("stream schedule exhausted; reset it before the next epoch")]
    Exhausted,
}

/// Encoded documents in corpus order. Empty documents are dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocumentSet {
    pub documents: Vec<Vec<TokenId>>,
}

impl DocumentSet {
    pub fn new(documents: Vec<Vec<TokenId>>) -> Self {
        Self { documents: documents.into_iter().filter(|d| !d.is_empty()).collect() }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    /// Splits off the last `count` documents (corpus order).
    pub fn split_tail(mut self, count: usize) -> (DocumentSet, DocumentSet) {
        let at = self.documents.len().saturating_sub(count);
        let tail = self.documents.split_off(at);
        (self, DocumentSet { documents: tail })
    }
}

/// Parses blank-line-delimited documents of one sentence per line.
pub fn parse_corpus(text: &str, vocab: &Vocab) -> Result<DocumentSet, CorpusError> {
    let mut documents = Vec::new();
    let mut sentences: Vec<&str> = Vec::new();
    for line in text.lines().chain(std::iter::once("")) {
        if line.trim().is_empty() {
            if !sentences.is_empty() {
                documents.push(encode_document(&sentences, vocab));
                sentences.clear();
            }
        } else {
            sentences.push(line);
        }
    }
    let ds = DocumentSet::new(documents);
    if ds.is_empty() {
        return Err(CorpusError::ZeroDocuments);
    }
    Ok(ds)
}

pub fn load_corpus(path: impl AsRef<Path>, vocab: &Vocab) -> Result<DocumentSet, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    parse_corpus(&text, vocab)
}

/// Deterministic permutation of whole documents.
pub fn shuffle_documents(ds: &DocumentSet, seed: u64) -> DocumentSet {
    let mut documents = ds.documents.clone();
    documents.shuffle(&mut substream(seed, &[tag::SHUFFLE]));
    DocumentSet { documents }
}

/// `seq_len` consecutive token ids of the concatenated corpus stream.
/// Only the final segment can contain padding, always at its end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub ids: Vec<TokenId>,
    pub valid_len: usize,
}

impl Segment {
    pub fn is_pad(&self, pos: usize) -> bool {
        pos >= self.valid_len
    }

    pub fn pad_count(&self) -> usize {
        self.ids.len() - self.valid_len
    }

    pub fn sequence(&self, vocab: &Vocab) -> TokenSequence {
        TokenSequence::new(self.ids.clone(), vocab)
    }
}

pub fn segment_stream(ds: &DocumentSet, seq_len: usize, pad: TokenId) -> Result<Vec<Segment>, CorpusError> {
    if seq_len < 3 {
        return Err(CorpusError::SegmentTooShort(seq_len));
    }
    let stream: Vec<TokenId> = ds.documents.iter().flatten().copied().collect();
    Ok(stream
        .chunks(seq_len)
        .map(|chunk| {
            let mut ids = chunk.to_vec();
            ids.resize(seq_len, pad);
            Segment { ids, valid_len: chunk.len() }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Clone, Debug)]
struct RowStream {
    start: usize,
    end: usize,
    direction: Direction,
}

impl RowStream {
    fn len(&self) -> usize {
        self.end - self.start
    }

    fn segment_at(&self, step: usize) -> Option<usize> {
        if step >= self.len() {
            return None;
        }
        Some(match self.direction {
            Direction::Forward => self.start + step,
            Direction::Reverse => self.end - 1 - step,
        })
    }
}

/// One `B × N` slice of the schedule.
#[derive(Clone, Debug)]
pub struct Batch {
    pub batch: usize,
    pub seq_len: usize,
    /// Row-major `batch × seq_len` token ids.
    pub tokens: Vec<TokenId>,
    /// True where the position is padding.
    pub pad: Vec<bool>,
    pub directions: Vec<Direction>,
    /// Segment index per row, `None` once a row has run out.
    pub segments: Vec<Option<usize>>,
    pub epoch_end: bool,
}

impl Batch {
    pub fn row(&self, r: usize) -> &[TokenId] {
        &self.tokens[r * self.seq_len..(r + 1) * self.seq_len]
    }

    pub fn row_pad(&self, r: usize) -> &[bool] {
        &self.pad[r * self.seq_len..(r + 1) * self.seq_len]
    }
}

/// Assignment of batch rows to contiguous segment ranges and directions.
#[derive(Clone, Debug)]
pub struct StreamSchedule {
    segments: Arc<[Segment]>,
    seq_len: usize,
    pad: TokenId,
    rows: Vec<RowStream>,
    step: usize,
}

/// Splits `segments` into `batch` contiguous, near-equal ranges.
///
/// With `btbptt`, `⌊batch/2⌋` rows walk their range in reverse: rows
/// `⌊batch/2⌋..batch` when `direction_seed` is `None`, otherwise a random
/// subset of that size drawn from the seed.
pub fn make_batch_streams(
    segments: Arc<[Segment]>,
    batch: usize,
    btbptt: bool,
    direction_seed: Option<u64>,
    pad: TokenId,
) -> Result<StreamSchedule, CorpusError> {
    if batch == 0 {
        return Err(CorpusError::EmptyBatch);
    }
    let total = segments.len();
    if total < batch {
        return Err(CorpusError::TooFewSegments { segments: total, rows: batch });
    }
    let seq_len = segments[0].ids.len();
    let mut reverse = vec![false; batch];
    if btbptt {
        let mut order: Vec<usize> = (0..batch).collect();
        if let Some(seed) = direction_seed {
            order.shuffle(&mut substream(seed, &[tag::DIRECTIONS]));
        } else {
            order.reverse();
        }
        for &r in order.iter().take(batch / 2) {
            reverse[r] = true;
        }
    }
    let rows = (0..batch)
        .map(|r| RowStream {
            start: r * total / batch,
            end: (r + 1) * total / batch,
            direction: if reverse[r] { Direction::Reverse } else { Direction::Forward },
        })
        .collect();
    Ok(StreamSchedule { segments, seq_len, pad, rows, step: 0 })
}

impl StreamSchedule {
    pub fn batch_size(&self) -> usize {
        self.rows.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.rows.iter().map(|r| r.direction).collect()
    }

    pub fn reverse_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.direction == Direction::Reverse).count()
    }

    /// Segment index range owned by row `r`.
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.rows[r].start..self.rows[r].end
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.rows.iter().map(RowStream::len).max().unwrap_or(0)
    }

    pub fn is_exhausted(&self) -> bool {
        self.step >= self.batches_per_epoch()
    }

    pub fn reset(&mut self) {
        self.step = 0;
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn next_batch(&mut self) -> Result<Batch, CorpusError> {
        if self.is_exhausted() {
            return Err(CorpusError::Exhausted);
        }
        let (b, n) = (self.rows.len(), self.seq_len);
        let mut tokens = Vec::with_capacity(b * n);
        let mut pad = Vec::with_capacity(b * n);
        let mut segments = Vec::with_capacity(b);
        for row in &self.rows {
            let idx = row.segment_at(self.step);
            match idx {
                Some(i) => {
                    let seg = &self.segments[i];
                    tokens.extend_from_slice(&seg.ids);
                    pad.extend((0..n).map(|p| seg.is_pad(p)));
                }
                None => {
                    tokens.extend(std::iter::repeat_n(self.pad, n));
                    pad.extend(std::iter::repeat_n(true, n));
                }
            }
            segments.push(idx);
        }
        self.step += 1;
        Ok(Batch {
            batch: b,
            seq_len: n,
            tokens,
            pad,
            directions: self.directions(),
            segments,
            epoch_end: self.is_exhausted(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(lens: &[usize]) -> DocumentSet {
        let mut next = 100;
        DocumentSet::new(
            lens.iter()
                .map(|&l| {
                    let d: Vec<TokenId> = (next..next + l as TokenId).collect();
                    next += l as TokenId;
                    d
                })
                .collect(),
        )
    }

    fn vocab() -> Vocab {
        Vocab::from_tokens(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b", "c"]).unwrap()
    }

    #[test]
    fn parses_blank_line_documents() {
        let v = vocab();
        let ds = parse_corpus("a b\nc\n\n\nb\n\na a\n", &v).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(matches!(parse_corpus("\n\n  \n", &v), Err(CorpusError::ZeroDocuments)));
    }

    #[test]
    fn shuffle_is_a_deterministic_permutation() {
        let ds = docs(&[3, 5, 7, 9, 11]);
        let a = shuffle_documents(&ds, 4);
        assert_eq!(a, shuffle_documents(&ds, 4));
        let mut sorted = a.documents.clone();
        sorted.sort();
        let mut orig = ds.documents.clone();
        orig.sort();
        assert_eq!(sorted, orig);
        let single = docs(&[4]);
        assert_eq!(shuffle_documents(&single, 9), single);
    }

    #[test]
    fn segmentation_pads_the_tail() {
        let segs = segment_stream(&docs(&[100, 200]), 128, 0).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[2].pad_count(), 84);
        assert!(segs[2].is_pad(44) && !segs[2].is_pad(43));
        let exact = segment_stream(&docs(&[64, 64]), 32, 0).unwrap();
        assert!(exact.iter().all(|s| s.pad_count() == 0));
        assert!(matches!(segment_stream(&docs(&[5]), 2, 0), Err(CorpusError::SegmentTooShort(2))));
    }

    #[test]
    fn direction_split() {
        let segs: Arc<[Segment]> = segment_stream(&docs(&[400]), 10, 0).unwrap().into();
        let s = make_batch_streams(segs.clone(), 20, true, None, 0).unwrap();
        assert_eq!(s.reverse_rows(), 10);
        assert!(s.directions()[..10].iter().all(|d| *d == Direction::Forward));
        let one = make_batch_streams(segs.clone(), 1, true, None, 0).unwrap();
        assert_eq!(one.reverse_rows(), 0);
        let off = make_batch_streams(segs.clone(), 20, false, None, 0).unwrap();
        assert_eq!(off.reverse_rows(), 0);
        let seeded = make_batch_streams(segs.clone(), 7, true, Some(3), 0).unwrap();
        assert_eq!(seeded.reverse_rows(), 3);
        assert!(matches!(
            make_batch_streams(segs, 41, false, None, 0),
            Err(CorpusError::TooFewSegments { .. })
        ));
    }

    #[test]
    fn rows_walk_their_ranges() {
        let segs: Arc<[Segment]> = segment_stream(&docs(&[100]), 10, 0).unwrap().into();
        let mut s = make_batch_streams(segs, 2, true, None, 0).unwrap();
        assert_eq!(s.row_range(0), 0..5);
        assert_eq!(s.row_range(1), 5..10);
        let first = s.next_batch().unwrap();
        assert_eq!(first.segments, vec![Some(0), Some(9)]);
        let second = s.next_batch().unwrap();
        assert_eq!(second.segments, vec![Some(1), Some(8)]);
        assert!(!second.epoch_end);
        for _ in 0..3 {
            s.next_batch().unwrap();
        }
        assert!(s.is_exhausted());
        assert!(matches!(s.next_batch(), Err(CorpusError::Exhausted)));
        s.reset();
        assert!(s.next_batch().is_ok());
    }

    #[test]
    fn uneven_rows_emit_padding() {
        let segs: Arc<[Segment]> = segment_stream(&docs(&[70]), 10, 0).unwrap().into();
        let mut s = make_batch_streams(segs, 3, false, None, 0).unwrap();
        // 7 segments over 3 rows: 2, 2, 3
        assert_eq!(s.batches_per_epoch(), 3);
        let mut last = None;
        while !s.is_exhausted() {
            last = Some(s.next_batch().unwrap());
        }
        let last = last.unwrap();
        assert!(last.epoch_end);
        assert_eq!(last.segments, vec![None, None, Some(6)]);
        assert!(last.row_pad(0).iter().all(|&p| p));
    }

    proptest::proptest! {
        #[test]
        fn segments_tile_the_stream(lens in proptest::collection::vec(1usize..40, 1..8), n in 3usize..17) {
            let ds = docs(&lens);
            let segs = segment_stream(&ds, n, 0).unwrap();
            let stream: Vec<TokenId> = ds.documents.iter().flatten().copied().collect();
            let rebuilt: Vec<TokenId> = segs.iter().flat_map(|s| s.ids[..s.valid_len].to_vec()).collect();
            proptest::prop_assert_eq!(rebuilt, stream);
            proptest::prop_assert!(segs.iter().all(|s| s.ids.len() == n));
            proptest::prop_assert!(segs[..segs.len() - 1].iter().all(|s| s.pad_count() == 0));
        }

        #[test]
        fn schedule_visits_each_segment_once(total in 1usize..60, b in 1usize..12, btbptt: bool, seed: Option<u64>) {
            proptest::prop_assume!(b <= total);
            let segs: Arc<[Segment]> = (0..total).map(|i| Segment { ids: vec![i as TokenId; 3], valid_len: 3 }).collect();
            let mut sched = make_batch_streams(segs, b, btbptt, seed, 0).unwrap();
            proptest::prop_assert_eq!(sched.reverse_rows(), if btbptt { b / 2 } else { 0 });
            let mut per_row: Vec<Vec<usize>> = vec![Vec::new(); b];
            while !sched.is_exhausted() {
                let batch = sched.next_batch().unwrap();
                for (r, idx) in batch.segments.iter().enumerate() {
                    per_row[r].extend(idx);
                }
            }
            let dirs = sched.directions();
            let mut seen: Vec<usize> = Vec::new();
            for (r, visited) in per_row.iter().enumerate() {
                let mut expect: Vec<usize> = sched.row_range(r).collect();
                if dirs[r] == Direction::Reverse {
                    expect.reverse();
                }
                proptest::prop_assert_eq!(visited, &expect);
                seen.extend(visited);
            }
            seen.sort();
            proptest::prop_assert_eq!(seen, (0..total).collect::<Vec<_>>());
        }
    }
}
