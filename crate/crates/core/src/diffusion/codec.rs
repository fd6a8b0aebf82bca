//! Image ↔ latent transforms standing in for a VAE.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::{Error, Result};

pub trait LatentCodec: Send + Sync {
    /// Spatial downsampling factor.
    fn factor(&self) -> usize;
    fn encode_grid(&self, img: &Grid) -> Result<Grid>;
    fn decode_grid(&self, latent: &Grid) -> Result<Grid>;

    fn encode(&self, img: &RgbImage) -> Result<Grid> {
        self.encode_grid(&Grid::from_rgb(img))
    }

    fn decode(&self, latent: &Grid) -> Result<RgbImage> {
        self.decode_grid(latent)?.to_rgb()
    }

    fn check_image(&self, width: usize, height: usize) -> Result<()> {
        let f = self.factor();
        if width == 0 || height == 0 || width % f != 0 || height % f != 0 {
            return Err(Error::BadDimensions { width, height, factor: f });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn factor(&self) -> usize {
        1
    }

    fn encode_grid(&self, img: &Grid) -> Result<Grid> {
        self.check_image(img.width, img.height)?;
        Ok(img.clone())
    }

    fn decode_grid(&self, latent: &Grid) -> Result<Grid> {
        Ok(latent.clone())
    }
}

/// `f×f` average pooling down; bilinear up followed by a per-block mean
/// correction, so that pooling a decoded grid returns the latent exactly
/// (up to rounding) and decode∘encode is a projection.
#[derive(Clone, Copy, Debug)]
pub struct PoolCodec {
    pub factor: usize,
}

impl PoolCodec {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("codec factor must be positive".into()));
        }
        Ok(PoolCodec { factor })
    }
}

fn pool(img: &Grid, f: usize) -> Grid {
    let (c, h, w) = (img.channels, img.height / f, img.width / f);
    let mut out = Grid::zeros(c, h, w);
    let inv = 1.0 / (f * f) as f32;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0f32;
                for dy in 0..f {
                    for dx in 0..f {
                        s += img.get(ch, y * f + dy, x * f + dx);
                    }
                }
                let i = out.idx(ch, y, x);
                out.values[i] = s * inv;
            }
        }
    }
    out
}

/// Half-pixel-centred bilinear upsampling with edge clamping.
fn bilinear(latent: &Grid, f: usize) -> Grid {
    let (c, lh, lw) = latent.shape();
    let (h, w) = (lh * f, lw * f);
    let mut out = Grid::zeros(c, h, w);
    let coord = |p: usize, n: usize| -> (usize, usize, f32) {
        let u = ((p as f32 + 0.5) / f as f32 - 0.5).max(0.0);
        let i0 = (u.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, u - i0 as f32)
    };
    for y in 0..h {
        let (y0, y1, fy) = coord(y, lh);
        for x in 0..w {
            let (x0, x1, fx) = coord(x, lw);
            for ch in 0..c {
                let top = latent.get(ch, y0, x0) * (1.0 - fx) + latent.get(ch, y0, x1) * fx;
                let bot = latent.get(ch, y1, x0) * (1.0 - fx) + latent.get(ch, y1, x1) * fx;
                let i = out.idx(ch, y, x);
                out.values[i] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

impl LatentCodec for PoolCodec {
    fn factor(&self) -> usize {
        self.factor
    }

    fn encode_grid(&self, img: &Grid) -> Result<Grid> {
        self.check_image(img.width, img.height)?;
        Ok(pool(img, self.factor))
    }

    fn decode_grid(&self, latent: &Grid) -> Result<Grid> {
        let f = self.factor;
        if f == 1 {
            return Ok(latent.clone());
        }
        let mut up = bilinear(latent, f);
        let back = pool(&up, f);
        for ch in 0..up.channels {
            for y in 0..up.height {
                for x in 0..up.width {
                    let r = latent.get(ch, y / f, x / f) - back.get(ch, y / f, x / f);
                    let i = up.idx(ch, y, x);
                    up.values[i] += r;
                }
            }
        }
        Ok(up)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Identity,
    Pool,
}

pub fn make_codec(kind: CodecKind, factor: usize) -> Result<Box<dyn LatentCodec>> {
    Ok(match kind {
        CodecKind::Identity => Box::new(IdentityCodec),
        CodecKind::Pool => Box::new(PoolCodec::new(factor)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_round_trip() {
        let img = RgbImage::from_fn(8, 4, |x, y| image::Rgb([(x * 30) as u8, (y * 60) as u8, 7]));
        let c = IdentityCodec;
        assert_eq!(c.decode(&c.encode(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn constant_image_survives_pooling() {
        let img = RgbImage::from_pixel(16, 8, image::Rgb([200, 13, 99]));
        let c = PoolCodec::new(4).unwrap();
        let z = c.encode(&img).unwrap();
        assert_eq!((z.height, z.width), (2, 4));
        assert_eq!(c.decode(&z).unwrap(), img);
    }

    #[test]
    fn bad_dims() {
        let c = PoolCodec::new(4).unwrap();
        assert!(matches!(c.encode(&RgbImage::new(10, 8)), Err(Error::BadDimensions { .. })));
    }
}
