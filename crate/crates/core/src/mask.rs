//! Caption-difference diffusion masks and their refinement with grounded
//! regions.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_sample, guided_noise, CancellationMap, Denoiser, LatentCodec, NoiseSchedule};
use crate::grid::{BitGrid, SoftMask};
use crate::grounding::RegionMask;
use crate::{Error, Result};

/// Inputs shared by both conditional estimates.
pub struct MaskModel<'a> {
    pub schedule: &'a NoiseSchedule,
    pub denoiser: &'a dyn Denoiser,
    pub codec: &'a dyn LatentCodec,
    pub guidance: f64,
}

/// Default timestep for the mask: `⌈T/2⌉`.
pub fn default_mask_step(steps: usize) -> usize {
    steps.div_ceil(2)
}

/// Min-max rescale into `[0, 1]`. A constant field has no contrast to
/// rescale: all zeros stays zero, any other constant becomes all ones.
pub fn rescale(values: &[f32]) -> Vec<f32> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if values.is_empty() {
        return Vec::new();
    }
    if hi == lo {
        let fill = if hi > 0.0 { 1.0 } else { 0.0 };
        return vec![fill; values.len()];
    }
    let span = hi - lo;
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Encodes `image`, noises it once to `t_noise`, and compares the guided
/// noise estimates under `c1` and `c2`: channel-mean absolute difference,
/// rescaled to `[0, 1]`, at latent resolution.
pub fn diffusion_mask(
    image: &RgbImage,
    c1: &[f32],
    c2: &[f32],
    model: &MaskModel<'_>,
    t_noise: usize,
    seed_value: u64,
) -> Result<SoftMask> {
    model.schedule.check_step(t_noise)?;
    let x0 = model.codec.encode(image)?;
    let no_cancel = BitGrid::new(x0.width, x0.height);
    let (xt, _) = forward_sample(&x0, t_noise, model.schedule, &no_cancel, seed_value)?;
    let level = model.schedule.noise_level(t_noise);
    let e1 = guided_noise(model.denoiser, &xt, level, c1, model.guidance)?;
    let e2 = if c1 == c2 { e1.clone() } else { guided_noise(model.denoiser, &xt, level, c2, model.guidance)? };
    let plane = x0.plane();
    let mut diff = vec![0.0f32; plane];
    for c in 0..x0.channels {
        for (i, d) in diff.iter_mut().enumerate() {
            *d += (e1.values[c * plane + i] - e2.values[c * plane + i]).abs();
        }
    }
    let inv = 1.0 / x0.channels as f32;
    diff.iter_mut().for_each(|d| *d *= inv);
    SoftMask::new(x0.width, x0.height, rescale(&diff))
}

/// `soft ≥ threshold`.
pub fn binarize(soft: &SoftMask, threshold: f64) -> Result<BitGrid> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    let th = threshold as f32;
    Ok(BitGrid { width: soft.width, height: soft.height, bits: soft.values.iter().map(|&v| v >= th).collect() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Not edited and never proposed.
    Untouched,
    FromDiffusion,
    /// Added by the alter regions (not in the diffusion mask).
    FromAlterUnion,
    /// Proposed by diffusion or alter but protected by a keep region.
    RemovedByKeep,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceHistogram {
    pub untouched: usize,
    pub from_diffusion: usize,
    pub from_alter_union: usize,
    pub removed_by_keep: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinedMask {
    pub mask: BitGrid,
    pub provenance: Vec<Provenance>,
}

impl RefinedMask {
    /// Wraps a mask produced without refinement; every set pixel is tagged
    /// as coming from `source`.
    pub fn plain(mask: BitGrid, source: Provenance) -> Self {
        let provenance = mask.bits.iter().map(|&b| if b { source } else { Provenance::Untouched }).collect();
        RefinedMask { mask, provenance }
    }

    pub fn histogram(&self) -> ProvenanceHistogram {
        let mut h = ProvenanceHistogram::default();
        for p in &self.provenance {
            match p {
                Provenance::Untouched => h.untouched += 1,
                Provenance::FromDiffusion => h.from_diffusion += 1,
                Provenance::FromAlterUnion => h.from_alter_union += 1,
                Provenance::RemovedByKeep => h.removed_by_keep += 1,
            }
        }
        h
    }
}

/// `(upsample(diffusion, f) ∪ alter) \ keep`. Keep wins wherever it
/// overlaps alter.
pub fn refine(diffusion: &BitGrid, alter: &RegionMask, keep: &RegionMask, factor: usize) -> Result<RefinedMask> {
    if factor == 0 {
        return Err(Error::InvalidArgument("factor must be positive".into()));
    }
    let up = diffusion.upsample(factor);
    up.same_dims(alter)?;
    up.same_dims(keep)?;
    let mut bits = Vec::with_capacity(up.bits.len());
    let mut provenance = Vec::with_capacity(up.bits.len());
    for i in 0..up.bits.len() {
        let proposed = up.bits[i] || alter.bits[i];
        let (on, tag) = if !proposed {
            (false, Provenance::Untouched)
        } else if keep.bits[i] {
            (false, Provenance::RemovedByKeep)
        } else if up.bits[i] {
            (true, Provenance::FromDiffusion)
        } else {
            (true, Provenance::FromAlterUnion)
        };
        bits.push(on);
        provenance.push(tag);
    }
    Ok(RefinedMask { mask: BitGrid { width: up.width, height: up.height, bits }, provenance })
}

/// Latent cells whose `f×f` image pixels are all keep.
pub fn cancellation_map(keep: &RegionMask, factor: usize) -> Result<CancellationMap> {
    keep.downsample_count(factor, factor * factor)
}
