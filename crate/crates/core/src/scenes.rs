//! Small synthetic scenes with hand-placed region masks, for demos and
//! tests. Each scene carries a caption pair and one mask per source noun,
//! keyed by lemma so it can be written out as a grounding fixture
//! directory.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::caption::stem;
use crate::diffusion::shapes::{ShapeKind, ShapeScene};
use crate::grid::BitGrid;
use crate::io::{save_mask_pgm, save_png};
use crate::{Error, Result};

pub const SCENE_SIZE: usize = 64;

#[derive(Clone, Debug)]
pub struct Scene {
    pub name: &'static str,
    pub image: RgbImage,
    pub source: &'static str,
    pub target: &'static str,
    /// `(lemma, region)` pairs.
    pub regions: Vec<(String, BitGrid)>,
}

impl Scene {
    pub fn region(&self, noun: &str) -> Result<&BitGrid> {
        let key = stem(&noun.to_lowercase());
        self.regions
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::InvalidArgument(format!("scene {} has no region {noun:?}", self.name)))
    }

    /// Writes `input.png` and one `<lemma>.pgm` per region into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        save_png(&dir.join("input.png"), &self.image)?;
        for (lemma, mask) in &self.regions {
            save_mask_pgm(&dir.join(format!("{lemma}.pgm")), mask)?;
        }
        Ok(())
    }
}

fn paint(img: &mut RgbImage, region: &BitGrid, color: [u8; 3]) {
    for (x, y, p) in img.enumerate_pixels_mut() {
        if region.get(x as usize, y as usize) {
            *p = Rgb(color);
        }
    }
}

fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> BitGrid {
    BitGrid::rect(SCENE_SIZE, SCENE_SIZE, x0, y0, x1, y1)
}

fn canvas(color: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(SCENE_SIZE as u32, SCENE_SIZE as u32, Rgb(color))
}

/// Sky over sand with a ship standing on the shore; the sand becomes
/// ocean.
pub fn ship_on_sand() -> Scene {
    let ship = rect(16, 18, 48, 46);
    let sky = rect(0, 0, 64, 24).minus(&ship).expect("same dims");
    let sand = rect(0, 40, 64, 64).minus(&ship).expect("same dims");
    let mut image = canvas([200, 200, 200]);
    paint(&mut image, &sky, [135, 190, 235]);
    paint(&mut image, &sand, [220, 195, 120]);
    paint(&mut image, &ship, [110, 70, 40]);
    Scene {
        name: "ship_on_sand",
        image,
        source: "A clear sky and a ship landed on the sand",
        target: "A clear sky and a ship landed on the ocean",
        regions: vec![("sky".into(), sky), ("ship".into(), ship), ("sand".into(), sand)],
    }
}

/// A woman whose jacket changes colour. The woman mask excludes the
/// jacket so the jacket stays editable.
pub fn red_jacket() -> Scene {
    let jacket = rect(18, 22, 46, 44);
    let woman = rect(22, 4, 42, 60).minus(&jacket).expect("same dims");
    let mut image = canvas([255, 255, 255]);
    paint(&mut image, &woman, [230, 190, 160]);
    paint(&mut image, &jacket, [220, 30, 30]);
    Scene {
        name: "red_jacket",
        image,
        source: "A woman with a red jacket",
        target: "A woman with a green jacket",
        regions: vec![("woman".into(), woman), ("jacket".into(), jacket)],
    }
}

/// A motorcycle and a man; the target caption drops the man.
pub fn motorcycle_and_man() -> Scene {
    let motorcycle = rect(4, 32, 36, 56);
    let man = rect(40, 8, 58, 60);
    let mut image = canvas([255, 255, 255]);
    paint(&mut image, &motorcycle, [40, 40, 40]);
    paint(&mut image, &man, [30, 60, 220]);
    Scene {
        name: "motorcycle_and_man",
        image,
        source: "A motorcycle near a man",
        target: "A motorcycle",
        regions: vec![("motorcycle".into(), motorcycle), ("man".into(), man)],
    }
}

/// The shapes-domain edit the shipped denoiser was trained for.
pub fn red_square() -> Scene {
    let shape = ShapeScene { kind: ShapeKind::Square, color: "red".into(), cx: 30, cy: 30, radius: 11 };
    Scene {
        name: "red_square",
        image: shape.render(SCENE_SIZE, SCENE_SIZE),
        source: "a red square",
        target: "a blue square",
        regions: vec![("square".into(), shape.mask(SCENE_SIZE, SCENE_SIZE))],
    }
}

pub fn all() -> Vec<Scene> {
    vec![ship_on_sand(), red_jacket(), motorcycle_and_man(), red_square()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_match_image_size() {
        for s in all() {
            for (_, m) in &s.regions {
                assert_eq!((m.width, m.height), (SCENE_SIZE, SCENE_SIZE));
                assert!(!m.is_empty_region());
            }
        }
        assert!(ship_on_sand().region("Ship").is_ok());
        assert!(ship_on_sand().region("ocean").is_err());
    }
}
