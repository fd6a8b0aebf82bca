//! Dense value grids and binary masks.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Channel-major `C×H×W` float grid. Used for latents, noise, and images in
/// float form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

/// Latent tensors share the image grid representation.
pub type LatentGrid = Grid;

impl Grid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f32) -> Self {
        Grid {
            channels,
            height,
            width,
            values: vec![v; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::dims(
                channels * height * width,
                format!("{} values", values.len()),
            ));
        }
        Ok(Grid {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[self.idx(c, y, x)]
    }

    pub fn same_shape(&self, other: &Grid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// RGB image to `[-1, 1]` floats.
    pub fn from_rgb(img: &RgbImage) -> Self {
        Self::from_rgb_scaled(img, |v| v as f32 / 127.5 - 1.0)
    }

    /// RGB image with raw `0..=255` channel values.
    pub fn from_rgb_raw(img: &RgbImage) -> Self {
        Self::from_rgb_scaled(img, |v| v as f32)
    }

    fn from_rgb_scaled(img: &RgbImage, f: impl Fn(u8) -> f32) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut g = Grid::zeros(3, h, w);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                let i = g.idx(c, y as usize, x as usize);
                g.values[i] = f(p.0[c]);
            }
        }
        g
    }

    /// Inverse of [`Grid::from_rgb`], rounding and clamping to `u8`.
    pub fn to_rgb(&self) -> Result<RgbImage> {
        if self.channels != 3 {
            return Err(Error::dims("3 channels", self.channels));
        }
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, p) in img.enumerate_pixels_mut() {
            for c in 0..3 {
                let v = (self.get(c, y as usize, x as usize) + 1.0) * 127.5;
                p.0[c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        Ok(img)
    }
}

/// Binary `H×W` grid. Region masks, cancellation maps and refined masks all
/// use this representation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitGrid {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BitGrid {
    pub fn new(width: usize, height: usize) -> Self {
        BitGrid {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BitGrid {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BitGrid {
            width,
            height,
            bits,
        }
    }

    /// Axis-aligned rectangle `[x0, x1) × [y0, y1)`.
    pub fn rect(width: usize, height: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_region(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &BitGrid) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &BitGrid, f: impl Fn(bool, bool) -> bool) -> Result<BitGrid> {
        self.same_dims(other)?;
        Ok(BitGrid {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn union(&self, other: &BitGrid) -> Result<BitGrid> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersect(&self, other: &BitGrid) -> Result<BitGrid> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn minus(&self, other: &BitGrid) -> Result<BitGrid> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> BitGrid {
        BitGrid {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> BitGrid {
        if factor == 1 {
            return self.clone();
        }
        BitGrid::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.get(x / factor, y / factor)
        })
    }

    /// Block downsampling: a cell is set when at least `min_count` of its
    /// `factor×factor` pixels are set.
    pub fn downsample_count(&self, factor: usize, min_count: usize) -> Result<BitGrid> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::BadDimensions {
                width: self.width,
                height: self.height,
                factor,
            });
        }
        Ok(BitGrid::from_fn(
            self.width / factor,
            self.height / factor,
            |cx, cy| {
                let mut n = 0;
                for y in cy * factor..(cy + 1) * factor {
                    for x in cx * factor..(cx + 1) * factor {
                        n += self.get(x, y) as usize;
                    }
                }
                n >= min_count
            },
        ))
    }
}

/// Real-valued `H×W` mask with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::dims(width * height, values.len()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "soft mask values must lie in [0, 1]".into(),
            ));
        }
        Ok(SoftMask {
            width,
            height,
            values,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_is_exact() {
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 40, y as u8 * 90, 255]));
        assert_eq!(Grid::from_rgb(&img).to_rgb().unwrap(), img);
    }

    #[test]
    fn downsample_thresholds() {
        let mut m = BitGrid::new(4, 4);
        m.set(0, 0, true);
        m.set(1, 0, true);
        let all = m.downsample_count(2, 4).unwrap();
        let half = m.downsample_count(2, 2).unwrap();
        assert_eq!(all.popcount(), 0);
        assert_eq!(half.bits, vec![true, false, false, false]);
        assert!(m.downsample_count(3, 1).is_err());
    }

    #[test]
    fn set_algebra() {
        let a = BitGrid::rect(4, 4, 0, 0, 2, 4);
        let b = BitGrid::rect(4, 4, 1, 0, 4, 2);
        assert_eq!(a.union(&b).unwrap().popcount(), 8 + 6 - 2);
        assert_eq!(a.intersect(&b).unwrap().popcount(), 2);
        assert_eq!(a.minus(&b).unwrap().popcount(), 6);
        assert!(a.union(&BitGrid::new(3, 3)).is_err());
    }
}
