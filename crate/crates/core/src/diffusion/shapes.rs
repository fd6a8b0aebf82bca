//! Synthetic single-shape scenes: one coloured square, circle or triangle
//! on a white background, captioned "a <colour> <shape>".

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::BitGrid;
use crate::seed;

pub const BACKGROUND: [u8; 3] = [255, 255, 255];

pub const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [220, 30, 30]),
    ("green", [30, 170, 50]),
    ("blue", [30, 60, 220]),
    ("yellow", [235, 205, 30]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeScene {
    pub kind: ShapeKind,
    pub color: String,
    pub cx: i64,
    pub cy: i64,
    /// Half extent in pixels.
    pub radius: i64,
}

pub fn color_rgb(name: &str) -> Option<[u8; 3]> {
    COLORS.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

impl ShapeScene {
    pub fn caption(&self) -> String {
        format!("a {} {}", self.color, self.kind.word())
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        let (dx, dy, r) = (x - self.cx, y - self.cy, self.radius);
        match self.kind {
            ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            // apex up, base at cy + r
            ShapeKind::Triangle => dy.abs() <= r && 2 * dx.abs() <= dy + r,
        }
    }

    pub fn mask(&self, width: usize, height: usize) -> BitGrid {
        BitGrid::from_fn(width, height, |x, y| self.contains(x as i64, y as i64))
    }

    pub fn render(&self, width: usize, height: usize) -> RgbImage {
        let fg = color_rgb(&self.color).unwrap_or([0, 0, 0]);
        RgbImage::from_fn(width as u32, height as u32, |x, y| {
            Rgb(if self.contains(x as i64, y as i64) { fg } else { BACKGROUND })
        })
    }

    pub fn random(rng: &mut impl Rng, width: usize, height: usize) -> Self {
        let size = width.min(height) as i64;
        let radius = rng.random_range(size / 8..=size / 4);
        let cx = rng.random_range(radius..width as i64 - radius);
        let cy = rng.random_range(radius..height as i64 - radius);
        ShapeScene {
            kind: ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())],
            color: COLORS[rng.random_range(0..COLORS.len())].0.to_string(),
            cx,
            cy,
            radius,
        }
    }
}

/// `n` random scenes rendered at `size×size` with their captions.
pub fn dataset(n: usize, size: usize, seed_value: u64) -> Vec<(ShapeScene, RgbImage, String)> {
    let mut rng = seed::rng(seed_value);
    (0..n)
        .map(|_| {
            let s = ShapeScene::random(&mut rng, size, size);
            let img = s.render(size, size);
            let cap = s.caption();
            (s, img, cap)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_mask_agree() {
        let s = ShapeScene { kind: ShapeKind::Square, color: "red".into(), cx: 20, cy: 30, radius: 8 };
        let img = s.render(64, 64);
        let m = s.mask(64, 64);
        assert_eq!(m.popcount(), 17 * 17);
        assert_eq!(img.get_pixel(20, 30).0, [220, 30, 30]);
        assert_eq!(img.get_pixel(0, 0).0, BACKGROUND);
        assert_eq!(s.caption(), "a red square");
        for (_, img, cap) in dataset(20, 64, 3) {
            assert_eq!(img.dimensions(), (64, 64));
            assert_eq!(cap.split(' ').count(), 3);
        }
    }
}
