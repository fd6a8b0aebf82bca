use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;
use serde::Deserialize;

use crate::caption::TokenizedCaption;
use crate::diffusion::shapes::COLORS;
use crate::grid::Grid;
use crate::io::load_dmg1;
use crate::{Error, Result};

/// Maps an image to features: one vector (FID) or per-layer grids (LPIPS).
pub trait FeatureProvider: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> u32 {
        1
    }
    fn vector(&self, img: &RgbImage) -> Result<Vec<f64>>;
    fn layers(&self, img: &RgbImage) -> Result<Vec<Grid>>;
}

fn block_mean(g: &Grid, f: usize) -> Grid {
    let (c, h, w) = (g.channels, g.height / f, g.width / f);
    let mut out = Grid::zeros(c, h, w);
    let inv = 1.0 / (f * f) as f32;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        s += g.get(ch, y * f + dy, x * f + dx);
                    }
                }
                let i = out.idx(ch, y, x);
                out.values[i] = s * inv;
            }
        }
    }
    out
}

/// Scales every pixel's channel vector to unit length (zero stays zero).
pub fn channel_normalize(g: &Grid) -> Grid {
    let mut out = g.clone();
    let plane = g.plane();
    for i in 0..plane {
        let n = (0..g.channels).map(|c| g.values[c * plane + i].powi(2)).sum::<f32>().sqrt();
        if n > 0.0 {
            for c in 0..g.channels {
                out.values[c * plane + i] /= n + 1e-10;
            }
        }
    }
    out
}

/// FID features: per-channel means over a 2×2 grid of blocks plus
/// per-channel standard deviations (15 values per image).
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelStats;

impl FeatureProvider for PixelStats {
    fn name(&self) -> &str {
        "pixel-stats"
    }

    fn vector(&self, img: &RgbImage) -> Result<Vec<f64>> {
        let g = Grid::from_rgb(img);
        let (h, w) = (g.height, g.width);
        if h < 2 || w < 2 {
            return Err(Error::dims("at least 2x2 pixels", format!("{w}x{h}")));
        }
        let mut out = Vec::with_capacity(15);
        for c in 0..3 {
            for (y0, y1) in [(0, h / 2), (h / 2, h)] {
                for (x0, x1) in [(0, w / 2), (w / 2, w)] {
                    let mut s = 0.0f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            s += g.get(c, y, x) as f64;
                        }
                    }
                    out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        for c in 0..3 {
            let vals = &g.values[c * g.plane()..(c + 1) * g.plane()];
            let m = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / vals.len() as f64;
            out.push(var.sqrt());
        }
        Ok(out)
    }

    fn layers(&self, img: &RgbImage) -> Result<Vec<Grid>> {
        Ok(vec![Grid::from_rgb(img)])
    }
}

/// LPIPS features: the image in `[-1, 1]` and its 2×2 average, each
/// channel-normalized.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawPyramid;

impl FeatureProvider for RawPyramid {
    fn name(&self) -> &str {
        "raw-pyramid"
    }

    fn vector(&self, img: &RgbImage) -> Result<Vec<f64>> {
        Ok(Grid::from_rgb(img).values.iter().map(|&v| v as f64).collect())
    }

    fn layers(&self, img: &RgbImage) -> Result<Vec<Grid>> {
        let g = Grid::from_rgb(img);
        let mut out = vec![channel_normalize(&g)];
        if g.height >= 2 && g.width >= 2 {
            out.push(channel_normalize(&block_mean(&g, 2)));
        }
        Ok(out)
    }
}

/// Raw `0..=255` pixels as a single unnormalized layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPixels;

impl FeatureProvider for IdentityPixels {
    fn name(&self) -> &str {
        "identity"
    }

    fn vector(&self, img: &RgbImage) -> Result<Vec<f64>> {
        Ok(Grid::from_rgb_raw(img).values.iter().map(|&v| v as f64).collect())
    }

    fn layers(&self, img: &RgbImage) -> Result<Vec<Grid>> {
        Ok(vec![Grid::from_rgb_raw(img)])
    }
}

/// Externally computed features stored as DMG1 grids, keyed by image file
/// name in a JSON manifest `{ "name.png": "features/name.dmg", ... }`.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedFeatures {
    pub features: HashMap<String, Grid>,
}

impl PrecomputedFeatures {
    pub fn load_manifest(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(transparent)]
        struct Manifest(HashMap<String, String>);
        let text = crate::io::read_bytes(path)?;
        let m: Manifest = serde_json::from_slice(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut features = HashMap::new();
        for (k, v) in m.0 {
            features.insert(k, load_dmg1(&base.join(v))?);
        }
        Ok(PrecomputedFeatures { features })
    }

    pub fn vector(&self, key: &str) -> Result<Vec<f64>> {
        self.features
            .get(key)
            .map(|g| g.values.iter().map(|&v| v as f64).collect())
            .ok_or_else(|| Error::MissingFeatures(key.to_string()))
    }
}

/// Caption and image embeddings in one space, for CLIPScore.
pub trait JointEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed_text(&self, caption: &TokenizedCaption) -> Result<Vec<f64>>;
    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>>;
}

/// Colour-word space: a caption counts the palette colour words it
/// mentions; an image counts the pixels nearest to each palette colour
/// (pixels nearer to white or black than to any palette colour are
/// ignored).
#[derive(Clone, Copy, Debug, Default)]
pub struct ColorWordEmbedder;

impl JointEmbedder for ColorWordEmbedder {
    fn name(&self) -> &str {
        "color-words"
    }

    fn embed_text(&self, caption: &TokenizedCaption) -> Result<Vec<f64>> {
        Ok(COLORS
            .iter()
            .map(|(name, _)| caption.tokens.iter().filter(|t| t.as_str() == *name).count() as f64)
            .collect())
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        let mut counts = vec![0.0; COLORS.len()];
        let dist = |a: [u8; 3], b: [u8; 3]| -> i32 { (0..3).map(|c| (a[c] as i32 - b[c] as i32).pow(2)).sum() };
        for p in img.pixels() {
            let (best, d) = COLORS
                .iter()
                .enumerate()
                .map(|(i, (_, c))| (i, dist(p.0, *c)))
                .min_by_key(|&(_, d)| d)
                .expect("palette is non-empty");
            if d < dist(p.0, [255, 255, 255]) && d < dist(p.0, [0, 0, 0]) {
                counts[best] += 1.0;
            }
        }
        Ok(counts)
    }
}
