use rand_distr::{Distribution, StandardNormal};

use super::denoiser::Denoiser;
use super::schedule::NoiseSchedule;
use crate::grid::{BitGrid, Grid};
use crate::{seed, Error, Result};

pub const DEFAULT_GUIDANCE: f64 = 7.5;

/// Binary latent-resolution map; 1 forces the forward noise to zero.
pub type CancellationMap = BitGrid;

/// Standard normal grid drawn in index order from `seed`.
pub fn gaussian_like(shape: (usize, usize, usize), seed_value: u64) -> Grid {
    let (c, h, w) = shape;
    let mut rng = seed::rng(seed_value);
    let values = (0..c * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
    Grid { channels: c, height: h, width: w, values }
}

fn check_cancel(x: &Grid, cancel: &CancellationMap) -> Result<()> {
    if cancel.width != x.width || cancel.height != x.height {
        return Err(Error::dims(
            format!("{}x{} cancellation map", x.width, x.height),
            format!("{}x{}", cancel.width, cancel.height),
        ));
    }
    Ok(())
}

/// Draws `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε` with ε zeroed (in every channel)
/// wherever `cancel` is set. Returns `(x_t, ε)` with the zeroed ε.
pub fn forward_sample(
    x0: &Grid,
    t: usize,
    schedule: &NoiseSchedule,
    cancel: &CancellationMap,
    seed_value: u64,
) -> Result<(Grid, Grid)> {
    schedule.check_step(t)?;
    check_cancel(x0, cancel)?;
    let mut eps = gaussian_like(x0.shape(), seed_value);
    let plane = x0.plane();
    for (i, e) in eps.values.iter_mut().enumerate() {
        if cancel.bits[i % plane] {
            *e = 0.0;
        }
    }
    let a = schedule.alpha_bar(t);
    let (sa, sn) = (a.sqrt() as f32, (1.0 - a).sqrt() as f32);
    let values = x0.values.iter().zip(&eps.values).map(|(x, e)| sa * x + sn * e).collect();
    Ok((Grid { values, ..x0.clone() }, eps))
}

/// Posterior mean `(1/√(1−β_t))·(x_t − β_t/√(1−ᾱ_t)·ε̂)`.
pub fn reverse_mean(xt: &Grid, t: usize, eps_hat: &Grid, schedule: &NoiseSchedule) -> Result<Grid> {
    schedule.check_step(t)?;
    xt.same_shape(eps_hat)?;
    let b = schedule.beta(t);
    let a = schedule.alpha_bar(t);
    let scale = 1.0 / (1.0 - b).sqrt();
    let coef = b / (1.0 - a).sqrt();
    let values = xt
        .values
        .iter()
        .zip(&eps_hat.values)
        .map(|(&x, &e)| (scale * (x as f64 - coef * e as f64)) as f32)
        .collect();
    Ok(Grid { values, ..xt.clone() })
}

/// `((1−ᾱ_{t−1})/(1−ᾱ_t))·β_t` for `t ≥ 1`.
pub fn posterior_variance(schedule: &NoiseSchedule, t: usize) -> f64 {
    let a = schedule.alpha_bar(t);
    let a_prev = schedule.alpha_bar(t - 1);
    (1.0 - a_prev) / (1.0 - a) * schedule.beta(t)
}

/// One ancestral step `x_t → x_{t−1}`. The last step (`t = 1`) returns the
/// mean without adding noise.
pub fn reverse_step(xt: &Grid, t: usize, eps_hat: &Grid, schedule: &NoiseSchedule, seed_value: u64) -> Result<Grid> {
    if t == 0 {
        return Err(Error::IndexOutOfRange("reverse step from t = 0".into()));
    }
    let mut mean = reverse_mean(xt, t, eps_hat, schedule)?;
    if t == 1 {
        return Ok(mean);
    }
    let sd = posterior_variance(schedule, t).sqrt() as f32;
    let z = gaussian_like(xt.shape(), seed_value);
    for (m, z) in mean.values.iter_mut().zip(&z.values) {
        *m += sd * z;
    }
    Ok(mean)
}

/// Classifier-free guidance `s·ε(x|c) + (1−s)·ε(x|0)`.
///
/// `s = 1` skips the unconditional pass and returns the conditional estimate
/// unchanged. Scales below 1 are accepted with a warning; negative scales
/// are rejected.
pub fn guided_noise(
    denoiser: &dyn Denoiser,
    xt: &Grid,
    noise_level: f64,
    cond: &[f32],
    s: f64,
) -> Result<Grid> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("guidance scale {s} must be non-negative")));
    }
    if s < 1.0 {
        log::warn!("guidance scale {s} below 1 extrapolates away from the condition");
    }
    let conditional = denoiser.predict(xt, noise_level, cond)?;
    if s == 1.0 {
        return Ok(conditional);
    }
    let zero = vec![0.0f32; cond.len()];
    let unconditional = denoiser.predict(xt, noise_level, &zero)?;
    let (s, r) = (s as f32, (1.0 - s) as f32);
    let values = conditional
        .values
        .iter()
        .zip(&unconditional.values)
        .map(|(c, u)| s * c + r * u)
        .collect();
    Ok(Grid { values, ..conditional })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::make_schedule;

    #[test]
    fn cancel_everywhere_is_pure_scaling() {
        let s = make_schedule(10, 0.01, 0.2).unwrap();
        let x0 = gaussian_like((2, 3, 4), 9);
        let (xt, eps) = forward_sample(&x0, 7, &s, &BitGrid::full(4, 3), 1).unwrap();
        let k = s.alpha_bar(7).sqrt() as f32;
        assert!(eps.values.iter().all(|&e| e == 0.0));
        for (a, b) in xt.values.iter().zip(&x0.values) {
            assert_eq!(*a, k * b);
        }
        assert!(forward_sample(&x0, 7, &s, &BitGrid::full(3, 3), 1).is_err());
        assert!(forward_sample(&x0, 10, &s, &BitGrid::full(4, 3), 1).is_err());
    }

    #[test]
    fn partial_cancel_covers_all_channels() {
        let s = make_schedule(4, 0.1, 0.3).unwrap();
        let x0 = Grid::zeros(3, 2, 2);
        let mut cancel = BitGrid::new(2, 2);
        cancel.set(1, 0, true);
        let (_, eps) = forward_sample(&x0, 2, &s, &cancel, 3).unwrap();
        for c in 0..3 {
            assert_eq!(eps.get(c, 0, 1), 0.0);
            assert_ne!(eps.get(c, 0, 0), 0.0);
        }
    }
}
