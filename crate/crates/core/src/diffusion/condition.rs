use rand_distr::{Distribution, StandardNormal};

use crate::caption::TokenizedCaption;
use crate::seed;

pub const COND_DIM: usize = 32;

/// Condition vector for a caption: sum of per-token Gaussian vectors keyed
/// by a stable hash of the lowercased token, L2-normalized. Order-free.
/// The empty token list maps to the zero vector, which is also the
/// unconditional input for guidance.
pub fn embed_tokens(tokens: &[String]) -> Vec<f32> {
    let mut acc = vec![0.0f64; COND_DIM];
    for t in tokens {
        let mut rng = seed::rng(seed::fnv1a(t.to_lowercase().as_bytes()));
        for a in acc.iter_mut() {
            let v: f64 = StandardNormal.sample(&mut rng);
            *a += v;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; COND_DIM];
    }
    acc.iter().map(|v| (v / norm) as f32).collect()
}

pub fn embed_caption(caption: &TokenizedCaption) -> Vec<f32> {
    embed_tokens(&caption.tokens)
}

pub fn unconditional() -> Vec<f32> {
    vec![0.0; COND_DIM]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bag_semantics() {
        assert_eq!(embed_tokens(&toks("a red square")), embed_tokens(&toks("square red a")));
        assert_eq!(embed_tokens(&[]), unconditional());
        let v = embed_tokens(&toks("a red square"));
        let n: f32 = v.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
        assert_ne!(v, embed_tokens(&toks("a blue square")));
    }
}
