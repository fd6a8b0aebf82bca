//! Softmax-margin training on gold word alignments.
//!
//! Per direction the loss is `log Σ_a exp(ψ(a) + λ·H(a, a*)) − ψ(a*)`, where
//! `H` is the Hamming distance between word-pair expansions. With `λ = 0`
//! this is the plain negative log-likelihood of the gold path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::crf::SpanAligner;
use super::{Direction, Segment, Span, SpanAlignmentPath, WordAlignmentSet};
use crate::caption::tokenize;
use crate::{par, seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldPair {
    pub source: String,
    pub target: String,
    /// `[i, j]` pairs: source token `i` aligned with target token `j`.
    pub alignment: Vec<[usize; 2]>,
}

pub fn parse_corpus(text: &str) -> Result<Vec<GoldPair>> {
    let pairs: Vec<GoldPair> = serde_json::from_str(text)?;
    if pairs.is_empty() {
        return Err(Error::format("alignment corpus", "no records"));
    }
    Ok(pairs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<GoldPair>> {
    let bytes = crate::io::read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    parse_corpus(&text)
}

/// The synthetic gold-alignment corpus bundled with the crate.
pub fn shipped_corpus() -> Vec<GoldPair> {
    parse_corpus(include_str!("../../data/align_corpus.json")).expect("bundled corpus parses")
}

/// Builds the span path whose word-pair expansion is exactly `gold`.
///
/// Consecutive source tokens sharing the same contiguous target set are
/// grouped (up to `max_span`); unaligned tokens become one-token NULL
/// segments. Fails when a token's targets are not a contiguous run of at
/// most `max_span` tokens.
pub fn gold_path(gold: &WordAlignmentSet, direction: Direction, max_span: usize) -> Result<SpanAlignmentPath> {
    let n = gold.source_len;
    let targets: Vec<Vec<usize>> = (0..n).map(|i| gold.targets_of(i).collect()).collect();
    let mut segments = Vec::new();
    let mut i = 0;
    while i < n {
        let t = &targets[i];
        if t.is_empty() {
            segments.push(Segment { source: Span::new(i, i + 1), target: None });
            i += 1;
            continue;
        }
        let (lo, hi) = (t[0], t[t.len() - 1] + 1);
        if hi - lo != t.len() || t.len() > max_span {
            return Err(Error::MalformedPath(format!(
                "token {i} aligns to a non-contiguous or over-long target set {t:?}"
            )));
        }
        let mut end = i + 1;
        while end < n && end - i < max_span && targets[end] == *t {
            end += 1;
        }
        segments.push(Segment { source: Span::new(i, end), target: Some(Span::new(lo, hi)) });
        i = end;
    }
    Ok(SpanAlignmentPath {
        direction,
        source_len: n,
        target_len: gold.target_len,
        segments,
        score: 0.0,
    })
}

/// A tokenized gold pair with its gold paths in both directions.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub gold: WordAlignmentSet,
    pub s2t: SpanAlignmentPath,
    pub t2s: SpanAlignmentPath,
}

impl TrainExample {
    pub fn from_pair(pair: &GoldPair, max_span: usize) -> Result<Self> {
        let source = tokenize(&pair.source)?;
        let target = tokenize(&pair.target)?;
        let gold = WordAlignmentSet::new(source.len(), target.len(), pair.alignment.iter().map(|&[i, j]| (i, j)))?;
        let s2t = gold_path(&gold, Direction::S2t, max_span)?;
        let t2s = gold_path(&gold.transpose(), Direction::T2s, max_span)?;
        Ok(TrainExample { source, target, gold, s2t, t2s })
    }
}

/// Loss and gradient of one direction.
fn direction_loss(
    aligner: &SpanAligner,
    src: &[String],
    tgt: &[String],
    gold: &WordAlignmentSet,
    path: &SpanAlignmentPath,
    lambda: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let table = aligner.table(src, tgt)?;
    let marg = if lambda == 0.0 {
        aligner.marginals(&table, None, None, 0.0)
    } else {
        let (cost, konst) = aligner.hamming_costs(&table, &gold.pairs, lambda);
        aligner.marginals(&table, Some(&cost), None, konst)
    };
    let gold_score = aligner.score_alignment(path, src, tgt)?;
    let loss = marg.log_z - gold_score;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let (gpw, gnull, gtr) = aligner.path_features(&table, path);
    let pw: Vec<f64> = marg.pair_weight.iter().zip(&gpw).map(|(e, g)| e - g).collect();
    aligner.accumulate_grad(&table, &pw, marg.null_weight - gnull, marg.transition_feature - gtr, grad);
    Ok(loss)
}

/// Bidirectional loss of one example and its gradient in the flat layout.
pub fn example_loss_and_grad(aligner: &SpanAligner, ex: &TrainExample, lambda: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; aligner.params.num_params()];
    let a = direction_loss(aligner, &ex.source, &ex.target, &ex.gold, &ex.s2t, lambda, &mut grad)?;
    let b = direction_loss(aligner, &ex.target, &ex.source, &ex.gold.transpose(), &ex.t2s, lambda, &mut grad)?;
    Ok((a + b, grad))
}

/// Summed loss and gradient over a batch. Examples are evaluated in
/// parallel and reduced in input order.
pub fn batch_loss_and_grad(aligner: &SpanAligner, batch: &[TrainExample], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let parts = par::map_slice(batch, |ex| example_loss_and_grad(aligner, ex, lambda));
    let mut loss = 0.0;
    let mut grad = vec![0.0; aligner.params.num_params()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mh = self.m[k] / bc1;
            let vh = self.v[k] / bc2;
            params[k] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the Hamming cost inside the partition function.
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 100, learning_rate: 0.01, lambda: 1.0, batch_size: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean bidirectional NLL (`λ = 0`) per example before training.
    pub initial_nll: f64,
    /// Mean bidirectional NLL after each epoch.
    pub epoch_nll: Vec<f64>,
    /// Mean training objective (cost-augmented) per epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainReport {
    pub fn final_nll(&self) -> f64 {
        self.epoch_nll.last().copied().unwrap_or(self.initial_nll)
    }
}

pub struct Trainer {
    pub aligner: SpanAligner,
    pub config: TrainConfig,
    adam: Adam,
}

impl Trainer {
    pub fn new(aligner: SpanAligner, config: TrainConfig) -> Self {
        let adam = Adam::new(aligner.params.num_params(), config.learning_rate);
        Trainer { aligner, config, adam }
    }

    /// One optimizer step on `batch`; returns the summed objective.
    pub fn train_step(&mut self, batch: &[TrainExample]) -> Result<f64> {
        let (loss, grad) = batch_loss_and_grad(&self.aligner, batch, self.config.lambda)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        let mut flat = self.aligner.params.to_flat();
        self.adam.step(&mut flat, &grad);
        self.aligner.params.set_flat(&flat)?;
        Ok(loss)
    }

    /// Mean bidirectional NLL over `data`.
    pub fn mean_nll(&self, data: &[TrainExample]) -> Result<f64> {
        let (loss, _) = batch_loss_and_grad(&self.aligner, data, 0.0)?;
        Ok(loss / data.len() as f64)
    }

    pub fn fit(&mut self, data: &[TrainExample]) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training corpus".into()));
        }
        let initial_nll = self.mean_nll(data)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = seed::rng(seed::derive(self.config.seed, 0xa11, 0));
        let mut epoch_nll = Vec::with_capacity(self.config.epochs);
        let mut epoch_loss = Vec::with_capacity(self.config.epochs);
        let bs = self.config.batch_size.max(1);
        for epoch in 0..self.config.epochs {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(bs) {
                let batch: Vec<TrainExample> = chunk.iter().map(|&k| data[k].clone()).collect();
                total += self.train_step(&batch)?;
            }
            let nll = self.mean_nll(data)?;
            log::debug!("aligner epoch {epoch}: objective {:.4}, nll {nll:.4}", total / data.len() as f64);
            epoch_loss.push(total / data.len() as f64);
            epoch_nll.push(nll);
        }
        Ok(TrainReport { initial_nll, epoch_nll, epoch_loss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aligner::{AlignerParams, HashEmbedder};
    use std::sync::Arc;

    #[test]
    fn gold_path_groups_phrases() {
        let gold = WordAlignmentSet::new(4, 3, [(0, 0), (1, 1), (2, 1), (3, 2)]).unwrap();
        let p = gold_path(&gold, Direction::S2t, 3).unwrap();
        assert_eq!(p.segments.len(), 3);
        assert_eq!(p.segments[1].source, Span::new(1, 3));
        assert_eq!(p.word_pairs(), gold.pairs);
        let back = gold_path(&gold.transpose(), Direction::T2s, 3).unwrap();
        assert_eq!(back.segments[1].target, Some(Span::new(1, 3)));
        let bad = WordAlignmentSet::new(1, 3, [(0, 0), (0, 2)]).unwrap();
        assert!(gold_path(&bad, Direction::S2t, 3).is_err());
    }

    #[test]
    fn shipped_corpus_is_consistent() {
        let corpus = shipped_corpus();
        assert_eq!(corpus.len(), 50);
        for pair in &corpus {
            let ex = TrainExample::from_pair(pair, 3).unwrap();
            assert_eq!(ex.s2t.word_pairs(), ex.gold.pairs);
        }
    }

    #[test]
    fn loss_is_nonnegative_and_zero_lambda_matches_nll() {
        let p = AlignerParams::random(8, 4, 3, &mut seed::rng(4));
        let a = SpanAligner::new(p, Arc::new(HashEmbedder::new(8))).unwrap();
        let ex = TrainExample::from_pair(
            &GoldPair { source: "a red cat".into(), target: "a blue cat".into(), alignment: vec![[0, 0], [2, 2]] },
            3,
        )
        .unwrap();
        let (l0, _) = example_loss_and_grad(&a, &ex, 0.0).unwrap();
        let (l1, _) = example_loss_and_grad(&a, &ex, 1.0).unwrap();
        assert!(l0 > 0.0 && l1 >= l0);
        let nll = a.log_partition(&ex.source, &ex.target).unwrap() - a.score_alignment(&ex.s2t, &ex.source, &ex.target).unwrap()
            + a.log_partition(&ex.target, &ex.source).unwrap()
            - a.score_alignment(&ex.t2s, &ex.target, &ex.source).unwrap();
        assert!((nll - l0).abs() < 1e-9);
    }
}
