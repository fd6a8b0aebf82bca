//! Masked reverse diffusion with per-step latent blending and a final
//! pixel composite.

use image::RgbImage;

use crate::diffusion::{forward_sample, guided_noise, reverse_step, CancellationMap, Denoiser, LatentCodec, NoiseSchedule};
use crate::grid::{BitGrid, Grid};
use crate::{seed, Error, Result};

const TAG_START: u64 = 0x5354;
const TAG_STEP: u64 = 0x5245;
const TAG_KNOWN: u64 = 0x4b4e;

pub struct InpaintModel<'a> {
    pub schedule: &'a NoiseSchedule,
    pub denoiser: &'a dyn Denoiser,
    pub codec: &'a dyn LatentCodec,
    pub guidance: f64,
}

/// Latent-resolution edit mask: a cell is edited when at least half of its
/// pixels are (ties go to edit).
pub fn latent_mask(refined: &BitGrid, factor: usize) -> Result<BitGrid> {
    refined.downsample_count(factor, (factor * factor).div_ceil(2))
}

/// `mask ⊙ edited + (1 − mask) ⊙ input`, per pixel.
pub fn composite(input: &RgbImage, edited: &RgbImage, mask: &BitGrid) -> Result<RgbImage> {
    if input.dimensions() != edited.dimensions()
        || (mask.width, mask.height) != (input.width() as usize, input.height() as usize)
    {
        return Err(Error::dims(
            format!("{}x{}", input.width(), input.height()),
            format!("{}x{} output, {}x{} mask", edited.width(), edited.height(), mask.width, mask.height),
        ));
    }
    let mut out = input.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if mask.get(x as usize, y as usize) {
            *p = *edited.get_pixel(x, y);
        }
    }
    Ok(out)
}

/// Regenerates the `refined` pixels of `image` under condition `c2`.
///
/// Starts from the (cancellation-aware) fully noised latent and runs every
/// reverse step of `schedule`; after each step the cells outside the latent
/// mask are replaced by the source latent noised to the new step. The
/// decoded result is composited so pixels outside `refined` are copied
/// from the input. `latents` receives `x_t` after each step when given.
#[allow(clippy::too_many_arguments)]
pub fn inpaint(
    image: &RgbImage,
    refined: &BitGrid,
    cancel: &CancellationMap,
    c2: &[f32],
    model: &InpaintModel<'_>,
    seed_value: u64,
    mut latents: Option<&mut Vec<Grid>>,
) -> Result<RgbImage> {
    if (refined.width, refined.height) != (image.width() as usize, image.height() as usize) {
        return Err(Error::dims(
            format!("{}x{}", image.width(), image.height()),
            format!("{}x{} refined mask", refined.width, refined.height),
        ));
    }
    if refined.is_empty_region() {
        return Ok(image.clone());
    }
    let steps = model.schedule.T();
    if steps < 2 {
        return Err(Error::InvalidArgument("inpainting needs at least two steps".into()));
    }
    let f = model.codec.factor();
    let x0 = model.codec.encode(image)?;
    let m = latent_mask(refined, f)?;
    let (mut x, _) = forward_sample(&x0, steps - 1, model.schedule, cancel, seed::derive(seed_value, TAG_START, 0))?;
    let plane = x0.plane();
    for t in (1..steps).rev() {
        let eps = guided_noise(model.denoiser, &x, model.schedule.noise_level(t), c2, model.guidance)?;
        x = reverse_step(&x, t, &eps, model.schedule, seed::derive(seed_value, TAG_STEP, t as u64))?;
        let (known, _) = forward_sample(&x0, t - 1, model.schedule, cancel, seed::derive(seed_value, TAG_KNOWN, t as u64))?;
        for (i, v) in x.values.iter_mut().enumerate() {
            if !m.bits[i % plane] {
                *v = known.values[i];
            }
        }
        if let Some(buf) = latents.as_deref_mut() {
            buf.push(x.clone());
        }
    }
    let decoded = model.codec.decode(&x)?;
    composite(image, &decoded, refined)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_vote_ties_edit() {
        let m = BitGrid::rect(4, 4, 0, 0, 2, 1);
        assert_eq!(latent_mask(&m, 2).unwrap().bits, vec![true, false, false, false]);
        let one = BitGrid::rect(4, 4, 0, 0, 1, 1);
        assert!(latent_mask(&one, 2).unwrap().is_empty_region());
    }
}
