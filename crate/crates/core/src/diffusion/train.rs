//! ε-prediction training for the convolutional denoiser.

use std::time::Instant;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::LatentCodec;
use super::condition::{embed_tokens, unconditional};
use super::denoiser::{ConvArch, ConvDenoiser, Denoiser};
use super::process::forward_sample;
use super::schedule::NoiseSchedule;
use crate::aligner::Adam;
use crate::caption::tokenize;
use crate::grid::{BitGrid, Grid};
use crate::{par, seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Noise draws per image per epoch.
    pub draws_per_image: usize,
    /// Probability of replacing the condition with the zero vector.
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 2e-3,
            draws_per_image: 1,
            cond_dropout: 0.1,
            seed: 0,
        }
    }
}

/// One encoded training image and its condition vector.
#[derive(Clone, Debug)]
pub struct LatentSample {
    pub latent: Grid,
    pub cond: Vec<f32>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DenoiserTrainReport {
    pub epoch_loss: Vec<f64>,
    pub seconds: f64,
    pub steps: usize,
}

/// Encodes `(image, caption)` pairs with `codec`.
pub fn encode_dataset(data: &[(RgbImage, String)], codec: &dyn LatentCodec) -> Result<Vec<LatentSample>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    data.iter()
        .map(|(img, cap)| {
            let tokens = tokenize(cap).unwrap_or_default();
            Ok(LatentSample { latent: codec.encode(img)?, cond: embed_tokens(&tokens) })
        })
        .collect()
}

/// Noise draw for training sample number `k`: a timestep, a noised latent,
/// its noise, and the (possibly dropped) condition.
fn draw(
    sample: &LatentSample,
    schedule: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
    k: u64,
) -> Result<(Grid, f64, Vec<f32>, Grid)> {
    let mut rng = seed::rng(seed::derive(cfg.seed, 0x7452, k));
    let t = rng.random_range(0..schedule.T());
    let cond = if rng.random::<f64>() < cfg.cond_dropout { unconditional() } else { sample.cond.clone() };
    let no_cancel = BitGrid::new(sample.latent.width, sample.latent.height);
    let (xt, eps) = forward_sample(&sample.latent, t, schedule, &no_cancel, rng.random())?;
    Ok((xt, schedule.noise_level(t), cond, eps))
}

/// Monte-Carlo estimate of the training objective `E‖ε_θ(x_t) − ε‖²` for
/// any denoiser, with `draws` noise draws per sample.
pub fn denoising_loss(
    denoiser: &dyn Denoiser,
    data: &[LatentSample],
    schedule: &NoiseSchedule,
    draws: usize,
    seed_value: u64,
) -> Result<f64> {
    let cfg = DenoiserTrainConfig { cond_dropout: 0.0, seed: seed_value, ..Default::default() };
    let n = data.len() * draws;
    let losses = par::map_range(n, |k| -> Result<f64> {
        let (xt, level, cond, eps) = draw(&data[k % data.len()], schedule, &cfg, k as u64)?;
        let pred = denoiser.predict(&xt, level, &cond)?;
        Ok(pred.values.iter().zip(&eps.values).map(|(p, e)| ((p - e) as f64).powi(2)).sum())
    });
    let total: f64 = losses.into_iter().collect::<Result<Vec<_>>>()?.into_iter().sum();
    Ok(total / n as f64)
}

/// Mean per-sample loss and averaged gradient over a batch of draw indices.
pub fn batch_loss_and_grad(
    model: &ConvDenoiser,
    data: &[LatentSample],
    schedule: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
    draws: &[(usize, u64)],
) -> Result<(f64, Vec<f32>)> {
    let parts = par::map_slice(draws, |&(i, k)| -> Result<(f64, Vec<f32>)> {
        let (xt, level, cond, eps) = draw(&data[i], schedule, cfg, k)?;
        model.loss_and_grad(&xt, level, &cond, &eps)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0f32; model.num_params()];
    for p in parts {
        let (l, g) = p?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / draws.len() as f32;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss / draws.len() as f64, grad))
}

/// Trains `model` in place with Adam. Each epoch visits every sample
/// `draws_per_image` times in a seeded shuffled order; the mean loss per
/// epoch is logged and returned.
pub fn fit_denoiser(
    model: &mut ConvDenoiser,
    data: &[LatentSample],
    schedule: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
) -> Result<DenoiserTrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let start = Instant::now();
    let mut adam = Adam::new(model.num_params(), cfg.learning_rate);
    let mut flat: Vec<f64> = model.params.iter().map(|&v| v as f64).collect();
    let mut report = DenoiserTrainReport::default();
    let mut k: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).flat_map(|i| std::iter::repeat_n(i, cfg.draws_per_image)).collect();
        let mut rng = seed::rng(seed::derive(cfg.seed, 0x5348, epoch as u64));
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let draws: Vec<(usize, u64)> = chunk
                .iter()
                .map(|&i| {
                    k += 1;
                    (i, k)
                })
                .collect();
            let (loss, grad) = batch_loss_and_grad(model, data, schedule, cfg, &draws)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss);
            }
            total += loss * chunk.len() as f64;
            let g: Vec<f64> = grad.iter().map(|&v| v as f64).collect();
            adam.step(&mut flat, &g);
            for (p, v) in model.params.iter_mut().zip(&flat) {
                *p = *v as f32;
            }
            report.steps += 1;
        }
        let mean = total / order.len() as f64;
        log::info!("denoiser epoch {epoch}: loss {mean:.4}");
        report.epoch_loss.push(mean);
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Encodes the dataset, initialises a model from `cfg.seed` and trains it.
pub fn train_denoiser(
    data: &[(RgbImage, String)],
    codec: &dyn LatentCodec,
    arch: ConvArch,
    schedule: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
) -> Result<(ConvDenoiser, DenoiserTrainReport)> {
    let samples = encode_dataset(data, codec)?;
    let mut model = ConvDenoiser::init(arch, &mut seed::rng(seed::derive(cfg.seed, 0x494e, 0)))?;
    let report = fit_denoiser(&mut model, &samples, schedule, cfg)?;
    Ok((model, report))
}

/// Trains the shapes denoiser: `images` random scenes at `size×size`,
/// pooled by [`super::SHAPES_CODEC_FACTOR`], on the 1000-step schedule.
pub fn train_shapes_denoiser(
    images: usize,
    size: usize,
    arch: ConvArch,
    cfg: &DenoiserTrainConfig,
) -> Result<(ConvDenoiser, DenoiserTrainReport)> {
    let data: Vec<(RgbImage, String)> = super::shapes::dataset(images, size, seed::derive(cfg.seed, 0x4441, 0))
        .into_iter()
        .map(|(_, img, cap)| (img, cap))
        .collect();
    let codec = super::PoolCodec::new(super::SHAPES_CODEC_FACTOR)?;
    train_denoiser(&data, &codec, arch, &super::training_schedule(), cfg)
}
