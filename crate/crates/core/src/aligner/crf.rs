//! Lattice computations: path scoring, log-partition (forward algorithm),
//! posterior marginals (forward-backward), and Viterbi decoding.
//!
//! Lattice state after consuming source tokens `0..i` is `(i, e)` where `e`
//! is the end of the most recent aligned target span (or none yet).

use std::cmp::Ordering;
use std::sync::Arc;

use super::embed::{embed_span, SpanEmbeddingProvider};
use super::params::AlignerParams;
use super::{enumerate_spans, Direction, Segment, Span, SpanAlignmentPath};
use crate::{Error, Result};

/// Relative tolerance under which two path scores count as tied. Equal
/// paths summed in a different order can differ in the last bit.
const TIE_TOL: f64 = 1e-9;

fn score_cmp(a: f64, b: f64) -> Option<Ordering> {
    if a.is_finite() && b.is_finite() && (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0) {
        return Some(Ordering::Equal);
    }
    a.partial_cmp(&b)
}

#[derive(Clone)]
pub struct SpanAligner {
    pub params: AlignerParams,
    pub embedder: Arc<dyn SpanEmbeddingProvider>,
}

impl std::fmt::Debug for SpanAligner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpanAligner")
            .field("embedder", &self.embedder.name())
            .field("dim", &self.params.dim)
            .field("hidden", &self.params.hidden)
            .field("max_span", &self.params.max_span)
            .finish()
    }
}

/// Precomputed span projections and pair similarities for one direction.
pub(crate) struct PairTable {
    pub n: usize,
    pub m: usize,
    pub max_span: usize,
    pub src_spans: Vec<Span>,
    pub tgt_spans: Vec<Span>,
    pub src_emb: Vec<Vec<f64>>,
    pub tgt_emb: Vec<Vec<f64>>,
    pub src_proj: Vec<Vec<f64>>,
    pub tgt_proj: Vec<Vec<f64>>,
    /// `sim[s * tgt_spans.len() + t]`.
    pub sim: Vec<f64>,
}

impl PairTable {
    fn src_index(&self, span: Span) -> usize {
        // spans are ordered by start, then length
        let d = self.max_span;
        let mut idx = 0;
        for start in 0..span.start {
            idx += d.min(self.n - start);
        }
        idx + span.len() - 1
    }

    fn tgt_index(&self, span: Span) -> usize {
        let d = self.max_span;
        let mut idx = 0;
        for start in 0..span.start {
            idx += d.min(self.m - start);
        }
        idx + span.len() - 1
    }

    fn n_tgt(&self) -> usize {
        self.tgt_spans.len()
    }
}

/// Expected feature counts under the (optionally cost-augmented) posterior.
#[derive(Clone, Debug)]
pub struct Marginals {
    pub log_z: f64,
    /// Posterior mass of each `(source span, target span)` pair, indexed
    /// like the aligner's span enumeration.
    pub pair_weight: Vec<f64>,
    pub null_weight: f64,
    /// Expected value of `Σ −|start_k − end_{k−1}|`.
    pub transition_feature: f64,
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// State index: 0 = no aligned target yet, `e + 1` = last target end `e`.
#[inline]
fn transition_feature(state: usize, target_start: usize) -> f64 {
    if state == 0 {
        0.0
    } else {
        -((target_start as f64) - ((state - 1) as f64)).abs()
    }
}

#[derive(Clone, Copy)]
struct Backpointer {
    prev_i: usize,
    prev_e: usize,
    seg: Segment,
}

impl SpanAligner {
    pub fn new(params: AlignerParams, embedder: Arc<dyn SpanEmbeddingProvider>) -> Result<Self> {
        params.validate()?;
        if embedder.dim() != params.dim {
            return Err(Error::dims(params.dim, embedder.dim()));
        }
        Ok(SpanAligner { params, embedder })
    }

    fn embed(&self, tokens: &[String], span: Span) -> Result<Vec<f64>> {
        embed_span(tokens, span, self.embedder.as_ref(), self.params.dim)
    }

    pub(crate) fn table(&self, src: &[String], tgt: &[String]) -> Result<PairTable> {
        let p = &self.params;
        let src_spans = enumerate_spans(src.len(), p.max_span);
        let tgt_spans = enumerate_spans(tgt.len(), p.max_span);
        let src_emb = src_spans.iter().map(|&s| self.embed(src, s)).collect::<Result<Vec<_>>>()?;
        let tgt_emb = tgt_spans.iter().map(|&s| self.embed(tgt, s)).collect::<Result<Vec<_>>>()?;
        let src_proj: Vec<Vec<f64>> = src_emb.iter().map(|e| p.project_source(e)).collect();
        let tgt_proj: Vec<Vec<f64>> = tgt_emb.iter().map(|e| p.project_target(e)).collect();
        let mut sim = Vec::with_capacity(src_spans.len() * tgt_spans.len());
        for sp in &src_proj {
            for tp in &tgt_proj {
                sim.push(p.head(sp, tp));
            }
        }
        Ok(PairTable {
            n: src.len(),
            m: tgt.len(),
            max_span: p.max_span,
            src_spans,
            tgt_spans,
            src_emb,
            tgt_emb,
            src_proj,
            tgt_proj,
            sim,
        })
    }

    /// Score ψ of a path. Accumulates left to right as `total += seg + trans`,
    /// the same association the lattice uses, so a decoded path re-scores to
    /// exactly its Viterbi score.
    pub fn score_alignment(&self, path: &SpanAlignmentPath, src: &[String], tgt: &[String]) -> Result<f64> {
        if path.source_len != src.len() || path.target_len != tgt.len() {
            return Err(Error::MalformedPath(format!(
                "path is {}x{}, captions are {}x{}",
                path.source_len,
                path.target_len,
                src.len(),
                tgt.len()
            )));
        }
        path.validate(self.params.max_span)?;
        let p = &self.params;
        let mut total = 0.0;
        let mut state = 0usize;
        for seg in &path.segments {
            match seg.target {
                None => total += p.null_score,
                Some(t) => {
                    let sp = p.project_source(&self.embed(src, seg.source)?);
                    let tp = p.project_target(&self.embed(tgt, t)?);
                    let edge = p.head(&sp, &tp) + p.transition * transition_feature(state, t.start);
                    total += edge;
                    state = t.end + 1;
                }
            }
        }
        Ok(total)
    }

    /// Visits every lattice edge leaving `(i, state)`:
    /// `f(source span index, target span index or None, next state, edge score)`.
    fn for_each_edge(
        &self,
        table: &PairTable,
        cost: Option<&[f64]>,
        null_cost: Option<&[f64]>,
        i: usize,
        state: usize,
        mut f: impl FnMut(usize, Option<usize>, usize, usize, f64),
    ) {
        let p = &self.params;
        let nt = table.n_tgt();
        for len in 1..=p.max_span.min(table.n - i) {
            let s_idx = table.src_index(Span::new(i, i + len));
            let mut null_edge = p.null_score;
            if let Some(nc) = null_cost {
                null_edge += nc[s_idx];
            }
            f(s_idx, None, i + len, state, null_edge);
            for (t_idx, t) in table.tgt_spans.iter().enumerate() {
                let mut edge = table.sim[s_idx * nt + t_idx] + p.transition * transition_feature(state, t.start);
                if let Some(c) = cost {
                    edge += c[s_idx * nt + t_idx];
                }
                f(s_idx, Some(t_idx), i + len, t.end + 1, edge);
            }
        }
    }

    fn forward(&self, table: &PairTable, cost: Option<&[f64]>, null_cost: Option<&[f64]>) -> Vec<Vec<f64>> {
        let states = table.m + 2;
        let mut alpha = vec![vec![f64::NEG_INFINITY; states]; table.n + 1];
        alpha[0][0] = 0.0;
        for i in 0..table.n {
            for e in 0..states {
                let a = alpha[i][e];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                self.for_each_edge(table, cost, null_cost, i, e, |_, _, ni, ne, edge| {
                    alpha[ni][ne] = log_add(alpha[ni][ne], a + edge);
                });
            }
        }
        alpha
    }

    fn backward(&self, table: &PairTable, cost: Option<&[f64]>, null_cost: Option<&[f64]>) -> Vec<Vec<f64>> {
        let states = table.m + 2;
        let mut beta = vec![vec![f64::NEG_INFINITY; states]; table.n + 1];
        beta[table.n].iter_mut().for_each(|b| *b = 0.0);
        for i in (0..table.n).rev() {
            for e in 0..states {
                let mut acc = f64::NEG_INFINITY;
                self.for_each_edge(table, cost, null_cost, i, e, |_, _, ni, ne, edge| {
                    acc = log_add(acc, edge + beta[ni][ne]);
                });
                beta[i][e] = acc;
            }
        }
        beta
    }

    /// `log Σ_a exp ψ(a)` over every path.
    pub fn log_partition(&self, src: &[String], tgt: &[String]) -> Result<f64> {
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::EmptyCaption);
        }
        let table = self.table(src, tgt)?;
        let alpha = self.forward(&table, None, None);
        Ok(alpha[table.n].iter().fold(f64::NEG_INFINITY, |acc, &a| log_add(acc, a)))
    }

    /// Posterior expectations, optionally under cost-augmented scores
    /// (`cost` per pair, `null_cost` per source span, `cost_const` added to
    /// every path).
    pub(crate) fn marginals(
        &self,
        table: &PairTable,
        cost: Option<&[f64]>,
        null_cost: Option<&[f64]>,
        cost_const: f64,
    ) -> Marginals {
        let alpha = self.forward(table, cost, null_cost);
        let beta = self.backward(table, cost, null_cost);
        let log_z = beta[0][0];
        let nt = table.n_tgt();
        let mut pair_weight = vec![0.0; table.src_spans.len() * nt];
        let mut null_weight = 0.0;
        let mut transition = 0.0;
        for i in 0..table.n {
            for e in 0..table.m + 2 {
                let a = alpha[i][e];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                self.for_each_edge(table, cost, null_cost, i, e, |s_idx, t_idx, ni, ne, edge| {
                    let w = (a + edge + beta[ni][ne] - log_z).exp();
                    match t_idx {
                        None => null_weight += w,
                        Some(t) => {
                            pair_weight[s_idx * nt + t] += w;
                            transition += w * transition_feature(e, table.tgt_spans[t].start);
                        }
                    }
                });
            }
        }
        Marginals {
            log_z: log_z + cost_const,
            pair_weight,
            null_weight,
            transition_feature: transition,
        }
    }

    /// Highest-scoring path. Score ties (equal up to rounding) resolve by
    /// comparing segments from the start of the path: shorter source span,
    /// then smaller target start, then shorter target span, with NULL after
    /// any target.
    pub fn viterbi_decode(&self, src: &[String], tgt: &[String], direction: Direction) -> Result<SpanAlignmentPath> {
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::EmptyCaption);
        }
        let table = self.table(src, tgt)?;
        let states = table.m + 2;
        let mut best = vec![vec![f64::NEG_INFINITY; states]; table.n + 1];
        let mut bp: Vec<Vec<Option<Backpointer>>> = vec![vec![None; states]; table.n + 1];
        best[0][0] = 0.0;
        for i in 0..table.n {
            for e in 0..states {
                let a = best[i][e];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                self.for_each_edge(&table, None, None, i, e, |s_idx, t_idx, ni, ne, edge| {
                    let cand_score = a + edge;
                    let seg = Segment {
                        source: table.src_spans[s_idx],
                        target: t_idx.map(|t| table.tgt_spans[t]),
                    };
                    let cand = Backpointer { prev_i: i, prev_e: e, seg };
                    let replace = match score_cmp(cand_score, best[ni][ne]) {
                        Some(Ordering::Greater) => true,
                        Some(Ordering::Equal) => {
                            let cur = bp[ni][ne].expect("finite score has a backpointer");
                            prefer(&bp, &cand, &cur) == Ordering::Less
                        }
                        _ => false,
                    };
                    if replace {
                        best[ni][ne] = cand_score;
                        bp[ni][ne] = Some(cand);
                    }
                });
            }
        }
        let n = table.n;
        let mut final_e = None::<usize>;
        for e in 0..states {
            if best[n][e] == f64::NEG_INFINITY {
                continue;
            }
            final_e = match final_e {
                None => Some(e),
                Some(f) => match score_cmp(best[n][e], best[n][f]) {
                    Some(Ordering::Greater) => Some(e),
                    Some(Ordering::Equal) if compare_chains(&bp, (n, e), (n, f)) == Ordering::Less => Some(e),
                    _ => Some(f),
                },
            };
        }
        let final_e = final_e.expect("at least one complete path");
        let mut segments = Vec::new();
        let (mut i, mut e) = (n, final_e);
        while let Some(b) = bp[i][e] {
            segments.push(b.seg);
            i = b.prev_i;
            e = b.prev_e;
        }
        segments.reverse();
        Ok(SpanAlignmentPath {
            direction,
            source_len: src.len(),
            target_len: tgt.len(),
            segments,
            score: best[n][final_e],
        })
    }

    /// Decodes both directions of a caption pair.
    pub fn decode_pair(&self, s: &[String], t: &[String]) -> Result<(SpanAlignmentPath, SpanAlignmentPath)> {
        Ok((
            self.viterbi_decode(s, t, Direction::S2t)?,
            self.viterbi_decode(t, s, Direction::T2s)?,
        ))
    }

    /// Adds `d loss / d params` to `grad` (flat layout of
    /// [`AlignerParams::to_flat`]) for loss `Σ pair_weight · sim + null_weight
    /// · null + transition_weight · w_tr`.
    pub(crate) fn accumulate_grad(
        &self,
        table: &PairTable,
        pair_weight: &[f64],
        null_weight: f64,
        transition_weight: f64,
        grad: &mut [f64],
    ) {
        let p = &self.params;
        let (d, h) = (p.dim, p.hidden);
        let nt = table.n_tgt();
        let n_w1 = h * 2 * d;
        let off_b1 = n_w1;
        let off_w2 = off_b1 + h;
        let off_sc = off_w2 + h;
        // δ at the hidden pre-activation, summed per source span and per
        // target span, turns the W1 gradient into one outer product per span.
        let mut delta_src = vec![vec![0.0; h]; table.src_spans.len()];
        let mut delta_tgt = vec![vec![0.0; h]; nt];
        for s in 0..table.src_spans.len() {
            for t in 0..nt {
                let w = pair_weight[s * nt + t];
                if w == 0.0 {
                    continue;
                }
                let tr = p.head_trace(&table.src_proj[s], &table.tgt_proj[t]);
                let (dz2, dslope2) = if tr.z2 >= 0.0 { (w, 0.0) } else { (w * p.slope2, w * tr.z2) };
                grad[off_sc + 1] += dslope2;
                for r in 0..h {
                    grad[off_w2 + r] += dz2 * tr.a1[r];
                    let da = dz2 * p.w2[r];
                    let (dz1, dslope1) = if tr.z1[r] >= 0.0 { (da, 0.0) } else { (da * p.slope1, da * tr.z1[r]) };
                    grad[off_sc] += dslope1;
                    grad[off_b1 + r] += dz1;
                    delta_src[s][r] += dz1;
                    delta_tgt[t][r] += dz1;
                }
            }
        }
        for (s, ds) in delta_src.iter().enumerate() {
            let e = &table.src_emb[s];
            for r in 0..h {
                if ds[r] == 0.0 {
                    continue;
                }
                let row = &mut grad[r * 2 * d..r * 2 * d + d];
                for (g, x) in row.iter_mut().zip(e) {
                    *g += ds[r] * x;
                }
            }
        }
        for (t, dt) in delta_tgt.iter().enumerate() {
            let e = &table.tgt_emb[t];
            for r in 0..h {
                if dt[r] == 0.0 {
                    continue;
                }
                let row = &mut grad[r * 2 * d + d..(r + 1) * 2 * d];
                for (g, x) in row.iter_mut().zip(e) {
                    *g += dt[r] * x;
                }
            }
        }
        grad[off_sc + 2] += transition_weight;
        grad[off_sc + 3] += null_weight;
    }

    /// Sparse feature counts of one path, for the gold side of the gradient.
    pub(crate) fn path_features(&self, table: &PairTable, path: &SpanAlignmentPath) -> (Vec<f64>, f64, f64) {
        let nt = table.n_tgt();
        let mut pw = vec![0.0; table.src_spans.len() * nt];
        let mut null = 0.0;
        let mut trans = 0.0;
        let mut state = 0;
        for seg in &path.segments {
            match seg.target {
                None => null += 1.0,
                Some(t) => {
                    pw[table.src_index(seg.source) * nt + table.tgt_index(t)] += 1.0;
                    trans += transition_feature(state, t.start);
                    state = t.end + 1;
                }
            }
        }
        (pw, null, trans)
    }

    /// Hamming cost of each lattice edge against a gold word-pair set
    /// (`|src|·|tgt| − 2·|gold ∩ src×tgt|` per aligned pair, 0 for NULL) and
    /// the constant `|gold|`.
    pub(crate) fn hamming_costs(
        &self,
        table: &PairTable,
        gold: &std::collections::BTreeSet<(usize, usize)>,
        lambda: f64,
    ) -> (Vec<f64>, f64) {
        let nt = table.n_tgt();
        let mut cost = vec![0.0; table.src_spans.len() * nt];
        for (s_idx, s) in table.src_spans.iter().enumerate() {
            for (t_idx, t) in table.tgt_spans.iter().enumerate() {
                let mut hits = 0usize;
                for i in s.indices() {
                    for j in t.indices() {
                        hits += gold.contains(&(i, j)) as usize;
                    }
                }
                cost[s_idx * nt + t_idx] = lambda * (s.len() * t.len()) as f64 - lambda * 2.0 * hits as f64;
            }
        }
        (cost, lambda * gold.len() as f64)
    }
}

/// Tie-break between a candidate backpointer and the incumbent for the same
/// lattice state: `Less` means the candidate is preferred.
fn prefer(bp: &[Vec<Option<Backpointer>>], cand: &Backpointer, cur: &Backpointer) -> Ordering {
    let mut a = chain_keys(bp, (cand.prev_i, cand.prev_e));
    a.push(cand.seg.tie_key());
    let mut b = chain_keys(bp, (cur.prev_i, cur.prev_e));
    b.push(cur.seg.tie_key());
    a.cmp(&b)
}

/// Compares the best paths into two states segment by segment from the
/// start of the sentence.
fn compare_chains(bp: &[Vec<Option<Backpointer>>], a: (usize, usize), b: (usize, usize)) -> Ordering {
    chain_keys(bp, a).cmp(&chain_keys(bp, b))
}

fn chain_keys(bp: &[Vec<Option<Backpointer>>], mut at: (usize, usize)) -> Vec<(usize, usize, usize, usize)> {
    let mut keys = Vec::new();
    while let Some(b) = bp[at.0][at.1] {
        keys.push(b.seg.tie_key());
        at = (b.prev_i, b.prev_e);
    }
    keys.reverse();
    keys
}
