//! Span embedding providers.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Span;
use crate::seed::fnv1a;
use crate::{Error, Result};

pub trait SpanEmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[String], span: Span) -> Result<Vec<f64>>;
}

/// Embeds `span` of `tokens`, checking the provider dimension against the
/// dimension the aligner was built for.
pub fn embed_span(
    tokens: &[String],
    span: Span,
    provider: &dyn SpanEmbeddingProvider,
    expected_dim: usize,
) -> Result<Vec<f64>> {
    if span.end > tokens.len() || span.start >= span.end {
        return Err(Error::IndexOutOfRange(format!(
            "span {}..{} over {} tokens",
            span.start,
            span.end,
            tokens.len()
        )));
    }
    let v = provider.embed(tokens, span)?;
    if v.len() != expected_dim || provider.dim() != expected_dim {
        return Err(Error::dims(expected_dim, v.len()));
    }
    Ok(v)
}

/// Character-trigram feature hashing. Each token maps to the L2-normalised
/// sum of signed trigram buckets of `<token>`; a span is the mean of its
/// token vectors.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
}

pub const DEFAULT_EMBED_DIM: usize = 64;

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: DEFAULT_EMBED_DIM }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let padded: Vec<char> = std::iter::once('<')
            .chain(token.chars())
            .chain(std::iter::once('>'))
            .collect();
        for w in padded.windows(3.min(padded.len())) {
            let s: String = w.iter().collect();
            let h = fnv1a(s.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl SpanEmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        "char-trigram-hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String], span: Span) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        for t in &tokens[span.start..span.end] {
            for (a, x) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += x;
            }
        }
        let n = span.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }
}

/// Precomputed span embeddings keyed by the span's space-joined tokens.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileEmbedder {
    pub dim: usize,
    pub spans: HashMap<String, Vec<f64>>,
}

impl FileEmbedder {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::io::read_bytes(path)?;
        let fe: FileEmbedder = serde_json::from_slice(&bytes)?;
        if let Some((k, v)) = fe.spans.iter().find(|(_, v)| v.len() != fe.dim) {
            return Err(Error::format(
                "embedding file",
                format!("span {k:?} has {} values, expected {}", v.len(), fe.dim),
            ));
        }
        Ok(fe)
    }
}

impl SpanEmbeddingProvider for FileEmbedder {
    fn name(&self) -> &str {
        "precomputed-file"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String], span: Span) -> Result<Vec<f64>> {
        let key = tokens[span.start..span.end].join(" ");
        self.spans
            .get(&key)
            .cloned()
            .ok_or(Error::MissingEmbedding(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn hash_embedding_is_deterministic_and_unit() {
        let e = HashEmbedder::default();
        let t = toks("a cat a cat");
        let a = e.embed(&t, Span::new(0, 2)).unwrap();
        let b = e.embed(&t, Span::new(2, 4)).unwrap();
        assert_eq!(a, b);
        let v = e.token_vector("cat");
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        // single-character tokens still hash
        assert!(e.token_vector("a").iter().any(|&x| x != 0.0));
    }

    #[test]
    fn file_embedder_passthrough() {
        let mut spans = HashMap::new();
        spans.insert("a cat".to_string(), vec![0.5, -1.0]);
        let fe = FileEmbedder { dim: 2, spans };
        let t = toks("a cat");
        assert_eq!(embed_span(&t, Span::new(0, 2), &fe, 2).unwrap(), vec![0.5, -1.0]);
        assert!(matches!(fe.embed(&t, Span::new(0, 1)), Err(Error::MissingEmbedding(_))));
        assert!(matches!(
            embed_span(&t, Span::new(0, 2), &fe, 3),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
