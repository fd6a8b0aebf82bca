//! Semi-Markov CRF span alignment between two captions.
//!
//! A path segments the source caption into contiguous spans of at most `D`
//! tokens and labels each with a target span or NULL. Its score sums a
//! learned span-pair similarity per aligned segment, a NULL score per
//! unaligned segment, and a transition penalty `−w_tr·|start_k − end_{k−1}|`
//! between consecutive aligned target spans (NULL segments are skipped when
//! measuring the distance). Both directions are decoded and intersected into
//! word alignments.

mod crf;
mod embed;
mod params;
mod train;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use crf::{Marginals, SpanAligner};
pub use embed::{embed_span, FileEmbedder, HashEmbedder, SpanEmbeddingProvider, DEFAULT_EMBED_DIM};
pub use params::{AlignerParams, DEFAULT_MAX_SPAN};
pub use train::{
    batch_loss_and_grad, example_loss_and_grad, gold_path, load_corpus, parse_corpus, shipped_corpus, Adam,
    GoldPair, TrainConfig, TrainExample, TrainReport, Trainer,
};

use crate::{Error, Result};

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// All spans of length `1..=max_len` over `n` tokens, ordered by start then
/// length.
pub fn enumerate_spans(n: usize, max_len: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for start in 0..n {
        for len in 1..=max_len.min(n - start) {
            out.push(Span::new(start, start + len));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    S2t,
    T2s,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::S2t => Direction::T2s,
            Direction::T2s => Direction::S2t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub source: Span,
    pub target: Option<Span>,
}

impl Segment {
    /// Ordering key for tie-breaks: shorter source span first, then smaller
    /// target start, then shorter target span; NULL sorts after every target.
    pub(crate) fn tie_key(&self) -> (usize, usize, usize, usize) {
        match self.target {
            Some(t) => (self.source.len(), 0, t.start, t.len()),
            None => (self.source.len(), 1, 0, 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanAlignmentPath {
    pub direction: Direction,
    pub source_len: usize,
    pub target_len: usize,
    pub segments: Vec<Segment>,
    /// Path score ψ under the parameters that produced or scored it.
    pub score: f64,
}

impl SpanAlignmentPath {
    /// Checks that source spans tile `0..source_len` in order, that spans
    /// respect `max_span`, and that target spans lie inside the target.
    pub fn validate(&self, max_span: usize) -> Result<()> {
        let mut pos = 0;
        for seg in &self.segments {
            let s = seg.source;
            if s.start != pos {
                return Err(Error::MalformedPath(format!(
                    "source span {s} does not start at {pos}"
                )));
            }
            if s.is_empty() || s.len() > max_span {
                return Err(Error::MalformedPath(format!("source span {s} has invalid length")));
            }
            if let Some(t) = seg.target {
                if t.is_empty() || t.len() > max_span || t.end > self.target_len {
                    return Err(Error::MalformedPath(format!("target span {t} invalid")));
                }
            }
            pos = s.end;
        }
        if pos != self.source_len {
            return Err(Error::MalformedPath(format!(
                "segments cover {pos} of {} source tokens",
                self.source_len
            )));
        }
        Ok(())
    }

    /// Cross product of every aligned span pair, in this path's orientation.
    pub fn word_pairs(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for seg in &self.segments {
            if let Some(t) = seg.target {
                for i in seg.source.indices() {
                    for j in t.indices() {
                        out.insert((i, j));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WordAlignmentSet {
    pub source_len: usize,
    pub target_len: usize,
    pub pairs: BTreeSet<(usize, usize)>,
}

impl WordAlignmentSet {
    pub fn new(source_len: usize, target_len: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let pairs: BTreeSet<_> = pairs.into_iter().collect();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= source_len || j >= target_len) {
            return Err(Error::IndexOutOfRange(format!(
                "pair ({i},{j}) outside {source_len}x{target_len}"
            )));
        }
        Ok(WordAlignmentSet {
            source_len,
            target_len,
            pairs,
        })
    }

    pub fn identity(n: usize) -> Self {
        WordAlignmentSet {
            source_len: n,
            target_len: n,
            pairs: (0..n).map(|i| (i, i)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        WordAlignmentSet {
            source_len: self.target_len,
            target_len: self.source_len,
            pairs: self.pairs.iter().map(|&(i, j)| (j, i)).collect(),
        }
    }

    pub fn targets_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.pairs.range((i, 0)..(i + 1, 0)).map(|&(_, j)| j)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Keeps `(i, j)` when `forward` aligns `i→j` and `backward` aligns `j→i`.
/// The result is oriented like `forward`.
pub fn align_bidirectional_merge(
    forward: &SpanAlignmentPath,
    backward: &SpanAlignmentPath,
) -> Result<WordAlignmentSet> {
    if forward.source_len != backward.target_len || forward.target_len != backward.source_len {
        return Err(Error::CaptionMismatch);
    }
    let back = backward.word_pairs();
    let pairs = forward
        .word_pairs()
        .into_iter()
        .filter(|&(i, j)| back.contains(&(j, i)));
    WordAlignmentSet::new(forward.source_len, forward.target_len, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(dir: Direction, n: usize, m: usize, segs: &[((usize, usize), Option<(usize, usize)>)]) -> SpanAlignmentPath {
        SpanAlignmentPath {
            direction: dir,
            source_len: n,
            target_len: m,
            segments: segs
                .iter()
                .map(|&((a, b), t)| Segment {
                    source: Span::new(a, b),
                    target: t.map(|(c, d)| Span::new(c, d)),
                })
                .collect(),
            score: 0.0,
        }
    }

    #[test]
    fn merge_is_intersection() {
        // s2t = {(0,1),(1,2)}, t2s = {(1,0)}  ->  {(0,1)}
        let s2t = path(Direction::S2t, 2, 3, &[((0, 1), Some((1, 2))), ((1, 2), Some((2, 3)))]);
        let t2s = path(
            Direction::T2s,
            3,
            2,
            &[((0, 1), None), ((1, 2), Some((0, 1))), ((2, 3), None)],
        );
        let m = align_bidirectional_merge(&s2t, &t2s).unwrap();
        assert_eq!(m.pairs.into_iter().collect::<Vec<_>>(), vec![(0, 1)]);
        let back = align_bidirectional_merge(&t2s, &s2t).unwrap();
        assert_eq!(back.pairs.into_iter().collect::<Vec<_>>(), vec![(1, 0)]);
    }

    #[test]
    fn merge_empty_and_mismatch() {
        let a = path(Direction::S2t, 1, 1, &[((0, 1), None)]);
        let b = path(Direction::T2s, 1, 1, &[((0, 1), None)]);
        assert!(align_bidirectional_merge(&a, &b).unwrap().is_empty());
        let c = path(Direction::T2s, 2, 1, &[((0, 2), None)]);
        assert!(matches!(align_bidirectional_merge(&a, &c), Err(Error::CaptionMismatch)));
    }

    #[test]
    fn span_cross_product() {
        let p = path(Direction::S2t, 2, 3, &[((0, 2), Some((1, 3)))]);
        assert_eq!(p.word_pairs().len(), 4);
        assert!(p.validate(3).is_ok());
        assert!(p.validate(1).is_err());
        let gap = path(Direction::S2t, 3, 3, &[((0, 1), None), ((2, 3), None)]);
        assert!(matches!(gap.validate(3), Err(Error::MalformedPath(_))));
    }

    #[test]
    fn spans_enumerated() {
        assert_eq!(enumerate_spans(4, 3).len(), 4 + 3 + 2);
        assert_eq!(enumerate_spans(2, 3).len(), 3);
    }
}
