//! Aligner parameters: a two-layer PReLU similarity head over concatenated
//! span embeddings, a transition weight, and a NULL-segment score.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::io::TensorBundle;
use crate::{Error, Result};

pub const DEFAULT_MAX_SPAN: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct AlignerParams {
    /// Span embedding dimension `d`.
    pub dim: usize,
    /// Hidden width of the similarity head.
    pub hidden: usize,
    /// `hidden × 2·dim`, row-major. Left half multiplies the source span
    /// embedding, right half the target span embedding.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub slope1: f64,
    pub slope2: f64,
    /// Weight on the negative target-distance between adjacent aligned spans.
    pub transition: f64,
    pub null_score: f64,
    /// Maximum span length `D`.
    pub max_span: usize,
}

#[inline]
pub(crate) fn prelu(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        slope * z
    }
}

/// Intermediate values of one head evaluation, kept for backprop.
pub(crate) struct HeadTrace {
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: f64,
}

impl AlignerParams {
    pub fn zeros(dim: usize, hidden: usize, max_span: usize) -> Self {
        AlignerParams {
            dim,
            hidden,
            w1: vec![0.0; hidden * 2 * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            slope1: 0.25,
            slope2: 0.25,
            transition: 0.0,
            null_score: 0.0,
            max_span,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.max_span == 0 {
            return Err(Error::InvalidArgument(
                "aligner dimension, hidden width and max span must be positive".into(),
            ));
        }
        if self.w1.len() != self.hidden * 2 * self.dim
            || self.b1.len() != self.hidden
            || self.w2.len() != self.hidden
        {
            return Err(Error::dims(
                format!("head {}x{}", self.hidden, 2 * self.dim),
                format!("w1={} b1={} w2={}", self.w1.len(), self.b1.len(), self.w2.len()),
            ));
        }
        Ok(())
    }

    /// Gaussian init scaled by fan-in. Slopes, transition weight and NULL
    /// score are drawn too so that every parameter is exercised.
    pub fn random(dim: usize, hidden: usize, max_span: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dim, hidden, max_span);
        let s1 = (1.0 / (2.0 * dim as f64)).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = s1 * rng.sample::<f64, _>(StandardNormal));
        p.b1.iter_mut().for_each(|w| *w = 0.1 * rng.sample::<f64, _>(StandardNormal));
        p.w2.iter_mut().for_each(|w| *w = s2 * rng.sample::<f64, _>(StandardNormal));
        p.slope1 = rng.random_range(-0.5..0.5);
        p.slope2 = rng.random_range(-0.5..0.5);
        p.transition = rng.random_range(0.0..1.0);
        p.null_score = rng.random_range(-1.0..0.5);
        p
    }

    /// Hand-set head scoring a span pair by embedding overlap plus a
    /// constant bonus: `bonus + Σ_r (|e_s[r] + e_t[r]| − |e_s[r] − e_t[r]|) / 2`,
    /// i.e. `Σ_r sign(e_s[r]·e_t[r])·min(|e_s[r]|, |e_t[r]|)`. PReLUs with
    /// slope −1 give the absolute values; the last hidden unit carries the
    /// bonus through its bias and the output PReLU has slope 1.
    pub fn lexical_prior(dim: usize, max_span: usize) -> Self {
        Self::lexical_prior_with(dim, max_span, 1.0, 3.0, 0.0)
    }

    pub fn lexical_prior_with(dim: usize, max_span: usize, bonus: f64, transition: f64, null_score: f64) -> Self {
        let mut p = Self::zeros(dim, 2 * dim + 1, max_span);
        let row = 2 * dim;
        for r in 0..dim {
            p.w1[r * row + r] = 1.0;
            p.w1[r * row + dim + r] = 1.0;
            p.w2[r] = 0.5;
            p.w1[(dim + r) * row + r] = 1.0;
            p.w1[(dim + r) * row + dim + r] = -1.0;
            p.w2[dim + r] = -0.5;
        }
        p.b1[2 * dim] = bonus;
        p.w2[2 * dim] = 1.0;
        p.slope1 = -1.0;
        p.slope2 = 1.0;
        p.transition = transition;
        p.null_score = null_score;
        p
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 4
    }

    /// `[w1, b1, w2, slope1, slope2, transition, null_score]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&[self.slope1, self.slope2, self.transition, self.null_score]);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dims(self.num_params(), flat.len()));
        }
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.slope1 = rest[0];
        self.slope2 = rest[1];
        self.transition = rest[2];
        self.null_score = rest[3];
        Ok(())
    }

    /// `W1_left · e` for a source span embedding.
    pub(crate) fn project_source(&self, e: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..self.hidden)
            .map(|r| {
                let row = &self.w1[r * 2 * d..r * 2 * d + d];
                row.iter().zip(e).map(|(w, x)| w * x).sum()
            })
            .collect()
    }

    /// `W1_right · e + b1` for a target span embedding.
    pub(crate) fn project_target(&self, e: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..self.hidden)
            .map(|r| {
                let row = &self.w1[r * 2 * d + d..(r + 1) * 2 * d];
                row.iter().zip(e).map(|(w, x)| w * x).sum::<f64>() + self.b1[r]
            })
            .collect()
    }

    /// Head output from projected halves.
    pub(crate) fn head(&self, src_proj: &[f64], tgt_proj: &[f64]) -> f64 {
        let mut z2 = 0.0;
        for r in 0..self.hidden {
            z2 += self.w2[r] * prelu(src_proj[r] + tgt_proj[r], self.slope1);
        }
        prelu(z2, self.slope2)
    }

    pub(crate) fn head_trace(&self, src_proj: &[f64], tgt_proj: &[f64]) -> HeadTrace {
        let z1: Vec<f64> = src_proj.iter().zip(tgt_proj).map(|(a, b)| a + b).collect();
        let a1: Vec<f64> = z1.iter().map(|&z| prelu(z, self.slope1)).collect();
        let mut z2 = 0.0;
        for r in 0..self.hidden {
            z2 += self.w2[r] * a1[r];
        }
        HeadTrace { z1, a1, z2 }
    }

    pub fn to_bundle(&self) -> TensorBundle {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mut b = TensorBundle::new(
            "span-aligner",
            json!({"dim": self.dim, "hidden": self.hidden, "max_span": self.max_span}),
        );
        b.push("w1", vec![self.hidden, 2 * self.dim], f(&self.w1));
        b.push("b1", vec![self.hidden], f(&self.b1));
        b.push("w2", vec![self.hidden], f(&self.w2));
        b.push(
            "scalars",
            vec![4],
            f(&[self.slope1, self.slope2, self.transition, self.null_score]),
        );
        b
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        if b.kind != "span-aligner" {
            return Err(Error::format("aligner params", format!("unexpected kind {}", b.kind)));
        }
        let meta = |k: &str| {
            b.meta
                .get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::format("aligner params", format!("missing meta {k}")))
        };
        let g = |name: &str| -> Result<Vec<f64>> { Ok(b.get(name)?.iter().map(|&x| x as f64).collect()) };
        let scalars = g("scalars")?;
        if scalars.len() != 4 {
            return Err(Error::format("aligner params", "scalars must hold 4 values"));
        }
        let p = AlignerParams {
            dim: meta("dim")?,
            hidden: meta("hidden")?,
            max_span: meta("max_span")?,
            w1: g("w1")?,
            b1: g("b1")?,
            w2: g("w2")?,
            slope1: scalars[0],
            slope2: scalars[1],
            transition: scalars[2],
            null_score: scalars[3],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_bundle().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bundle(&TensorBundle::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn flat_round_trip_and_count() {
        let p = AlignerParams::random(2, 1, 3, &mut seed::rng(1));
        assert_eq!(p.num_params(), 10);
        let mut q = AlignerParams::zeros(2, 1, 3);
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[0.0; 3]).is_err());
    }

    #[test]
    fn lexical_prior_scores_overlap() {
        let p = AlignerParams::lexical_prior_with(3, 3, 1.0, 1.0, 0.0);
        let a = [0.5, 0.25, -0.5];
        let b = [0.25, -0.25, -1.0];
        // min-overlap 0.25 − 0.25 + 0.5, plus bonus
        let s = p.head(&p.project_source(&a), &p.project_target(&b));
        assert!((s - 1.5).abs() < 1e-12);
        assert_eq!(p.head(&p.project_source(&a), &p.project_target(&a)), 2.25);
    }

    #[test]
    fn bundle_round_trip_is_stable_after_f32() {
        let p = AlignerParams::random(4, 3, 3, &mut seed::rng(7));
        let once = AlignerParams::from_bundle(&p.to_bundle()).unwrap();
        let twice = AlignerParams::from_bundle(&once.to_bundle()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.dim, 4);
    }
}
