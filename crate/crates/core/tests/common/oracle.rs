//! Exhaustive-enumeration oracle for the span aligner.
//!
//! Scores are recomputed from the raw parameter vectors with scalar loops,
//! and every path over the lattice is listed explicitly.

use std::cmp::Ordering;

use dmalign_core::aligner::{AlignerParams, Segment, Span, SpanEmbeddingProvider};

fn prelu(z: f64, a: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        a * z
    }
}

pub fn pair_score(p: &AlignerParams, es: &[f64], et: &[f64]) -> f64 {
    let d = p.dim;
    let mut z2 = 0.0;
    for r in 0..p.hidden {
        let mut left = 0.0;
        for k in 0..d {
            left += p.w1[r * 2 * d + k] * es[k];
        }
        let mut right = 0.0;
        for k in 0..d {
            right += p.w1[r * 2 * d + d + k] * et[k];
        }
        right += p.b1[r];
        z2 += p.w2[r] * prelu(left + right, p.slope1);
    }
    prelu(z2, p.slope2)
}

pub fn path_score(
    p: &AlignerParams,
    emb: &dyn SpanEmbeddingProvider,
    src: &[String],
    tgt: &[String],
    segs: &[Segment],
) -> f64 {
    let mut total = 0.0;
    let mut last_end: Option<usize> = None;
    for seg in segs {
        match seg.target {
            None => total += p.null_score,
            Some(t) => {
                let es = emb.embed(src, seg.source).unwrap();
                let et = emb.embed(tgt, t).unwrap();
                let trans = match last_end {
                    None => 0.0,
                    Some(e) => -((t.start as f64) - (e as f64)).abs(),
                };
                total += pair_score(p, &es, &et) + p.transition * trans;
                last_end = Some(t.end);
            }
        }
    }
    total
}

/// Every labelled segmentation of `n` source tokens against `m` target
/// tokens with spans of at most `d` tokens.
pub fn all_paths(n: usize, m: usize, d: usize) -> Vec<Vec<Segment>> {
    let mut labels = vec![None];
    for s in 0..m {
        for e in s + 1..=(s + d).min(m) {
            labels.push(Some(Span::new(s, e)));
        }
    }
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(
        pos: usize,
        n: usize,
        d: usize,
        labels: &[Option<Span>],
        cur: &mut Vec<Segment>,
        out: &mut Vec<Vec<Segment>>,
    ) {
        if pos == n {
            out.push(cur.clone());
            return;
        }
        for end in pos + 1..=(pos + d).min(n) {
            for &l in labels {
                cur.push(Segment { source: Span::new(pos, end), target: l });
                rec(end, n, d, labels, cur, out);
                cur.pop();
            }
        }
    }
    rec(0, n, d, &labels, &mut cur, &mut out);
    out
}

fn key(s: &Segment) -> (usize, usize, usize, usize) {
    match s.target {
        Some(t) => (s.source.len(), 0, t.start, t.len()),
        None => (s.source.len(), 1, 0, 0),
    }
}

/// Preference among equal-score paths: compare segments from the first one
/// onwards; shorter source span, then earlier target, then shorter target,
/// NULL last.
pub fn tie_order(a: &[Segment], b: &[Segment]) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let o = key(x).cmp(&key(y));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

pub struct BruteForce {
    pub best: Vec<Segment>,
    pub best_score: f64,
    pub log_z: f64,
}

pub fn brute_force(
    p: &AlignerParams,
    emb: &dyn SpanEmbeddingProvider,
    src: &[String],
    tgt: &[String],
) -> BruteForce {
    let paths = all_paths(src.len(), tgt.len(), p.max_span);
    let scores: Vec<f64> = paths.iter().map(|s| path_score(p, emb, src, tgt, s)).collect();
    let mut best = 0;
    for k in 1..paths.len() {
        // scores equal up to summation rounding are ties
        let (a, b) = (scores[k], scores[best]);
        let better = if (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0) {
            tie_order(&paths[k], &paths[best]) == Ordering::Less
        } else {
            a > b
        };
        if better {
            best = k;
        }
    }
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = mx + scores.iter().map(|s| (s - mx).exp()).sum::<f64>().ln();
    BruteForce { best: paths[best].clone(), best_score: scores[best], log_z }
}

/// Caption pairs with 1..=`max_len` tokens per side drawn from a small
/// vocabulary so that repeated tokens (and exact score ties) occur.
pub fn caption_pairs(max_len: usize, per_shape: usize, seed: u64) -> Vec<(Vec<String>, Vec<String>)> {
    use rand::{Rng, SeedableRng};
    let vocab = ["a", "cat", "red", "dog", "the", "on"];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for n in 1..=max_len {
        for m in 1..=max_len {
            for _ in 0..per_shape {
                let mut draw = |k: usize| -> Vec<String> {
                    (0..k).map(|_| vocab[rng.random_range(0..vocab.len())].to_string()).collect()
                };
                let s = draw(n);
                let t = draw(m);
                out.push((s, t));
            }
        }
    }
    out
}
