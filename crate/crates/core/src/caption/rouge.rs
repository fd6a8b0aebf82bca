use std::collections::HashMap;

use super::TokenizedCaption;
use crate::{Error, Result};

/// Caption-pair similarity cut-off used to select near-paraphrase subsets.
pub const DEFAULT_ROUGE_THRESHOLD: f64 = 0.75;

/// ROUGE-1 F1 with clipped unigram counts.
pub fn rouge1_f1(a: &[String], b: &[String]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCaption);
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for t in a {
        counts.entry(t).or_default().0 += 1;
    }
    for t in b {
        counts.entry(t).or_default().1 += 1;
    }
    let overlap: usize = counts.values().map(|&(x, y)| x.min(y)).sum();
    if overlap == 0 {
        return Ok(0.0);
    }
    let p = overlap as f64 / b.len() as f64;
    let r = overlap as f64 / a.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

pub fn rouge_similarity(c1: &TokenizedCaption, c2: &TokenizedCaption) -> Result<f64> {
    rouge1_f1(&c1.tokens, &c2.tokens)
}
