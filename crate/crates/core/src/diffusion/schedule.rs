use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const TRAIN_STEPS: usize = 1000;
pub const DEFAULT_STEPS: usize = 50;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

/// β and cumulative ᾱ per step. Step indices run `0..T`; `alphas_cumprod[t]`
/// is the product of `1 − β_i` for `i ≤ t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    #[allow(non_snake_case)]
    pub fn T(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_cumprod[t]
    }

    /// `√(1 − ᾱ_t)`, the standard deviation of the noise in `x_t`. This is
    /// what the denoiser is conditioned on, so a respaced schedule reuses a
    /// model trained on the full one.
    pub fn noise_level(&self, t: usize) -> f64 {
        (1.0 - self.alphas_cumprod[t]).sqrt()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.T() {
            return Err(Error::IndexOutOfRange(format!("step {t} of {}", self.T())));
        }
        Ok(())
    }

    /// Builds a schedule directly from betas.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidScheduleBounds("no steps".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidScheduleBounds(format!("beta {b} outside (0, 1)")));
        }
        let mut acc = 1.0;
        let alphas_cumprod = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alphas_cumprod })
    }

    /// Keeps `steps` of the original ᾱ values at indices `0, k, 2k, …` with
    /// the largest stride `k` that fits, and recomputes the betas so the
    /// running product reproduces exactly those ᾱ values. A constant stride
    /// keeps the new betas increasing.
    pub fn respace(&self, steps: usize) -> Result<Self> {
        let n = self.T();
        if steps == 0 || steps > n {
            return Err(Error::InvalidScheduleBounds(format!("cannot respace {n} steps to {steps}")));
        }
        let idx: Vec<usize> = if steps == 1 {
            vec![n - 1]
        } else {
            let stride = (n - 1) / (steps - 1);
            (0..steps).map(|i| i * stride).collect()
        };
        let mut betas = Vec::with_capacity(steps);
        let mut prev = 1.0;
        let mut kept = Vec::with_capacity(steps);
        for &i in &idx {
            let a = self.alphas_cumprod[i];
            betas.push(1.0 - a / prev);
            kept.push(a);
            prev = a;
        }
        Ok(NoiseSchedule { betas, alphas_cumprod: kept })
    }
}

/// Linear β from `beta_start` to `beta_end` over `T` steps.
#[allow(non_snake_case)]
pub fn make_schedule(T: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if T == 0 {
        return Err(Error::InvalidScheduleBounds("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidScheduleBounds(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas = if T == 1 {
        vec![beta_start]
    } else {
        (0..T)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (T - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

/// The 1000-step training schedule.
pub fn training_schedule() -> NoiseSchedule {
    make_schedule(TRAIN_STEPS, BETA_START, BETA_END).expect("default bounds are valid")
}

/// Training schedule respaced to `steps` sampling steps.
pub fn inference_schedule(steps: usize) -> Result<NoiseSchedule> {
    training_schedule().respace(steps)
}
