//! File formats: PGM masks, `DMG1` latent dumps, and flat `f32` parameter
//! blobs with a JSON shape sidecar.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::grid::{BitGrid, Grid, SoftMask};
use crate::{Error, Result};

pub const DMG1_MAGIC: &[u8; 4] = b"DMG1";

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    decode_image(&read_bytes(path)?)
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_png(img)?)
}

// ---------------------------------------------------------------------------
// PGM (P5)

/// Raw PGM payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Pgm {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.samples.iter().map(|&s| s as u8));
        } else {
            for &s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Pgm> {
        let err = |m: &str| Error::format("pgm", m);
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(err("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("bad header"))?);
        }
        if fields[0] != "P5" {
            return Err(err("expected P5 magic"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| err("bad header number"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(err("maxval out of range"));
        }
        pos += 1; // single whitespace after maxval
        let n = width * height;
        let data = bytes.get(pos..).unwrap_or(&[]);
        let samples: Vec<u16> = if maxval < 256 {
            if data.len() < n {
                return Err(err("truncated raster"));
            }
            data[..n].iter().map(|&b| b as u16).collect()
        } else {
            if data.len() < 2 * n {
                return Err(err("truncated raster"));
            }
            data[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        Ok(Pgm {
            width,
            height,
            maxval: maxval as u16,
            samples,
        })
    }
}

/// Binary mask as 8-bit PGM with 0/255 samples.
pub fn encode_mask_pgm(mask: &BitGrid) -> Vec<u8> {
    Pgm {
        width: mask.width,
        height: mask.height,
        maxval: 255,
        samples: mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    }
    .encode()
}

/// Reads a binary mask; samples at or above half of maxval are set.
pub fn decode_mask_pgm(bytes: &[u8]) -> Result<BitGrid> {
    let pgm = Pgm::decode(bytes)?;
    let half = (pgm.maxval as u32 + 1) / 2;
    Ok(BitGrid {
        width: pgm.width,
        height: pgm.height,
        bits: pgm.samples.iter().map(|&s| s as u32 >= half).collect(),
    })
}

pub fn save_mask_pgm(path: &Path, mask: &BitGrid) -> Result<()> {
    write_bytes(path, &encode_mask_pgm(mask))
}

pub fn load_mask_pgm(path: &Path) -> Result<BitGrid> {
    decode_mask_pgm(&read_bytes(path)?)
}

/// Soft mask as 16-bit PGM, `round(v · 65535)`.
pub fn encode_soft_pgm(mask: &SoftMask) -> Vec<u8> {
    Pgm {
        width: mask.width,
        height: mask.height,
        maxval: 65535,
        samples: mask
            .values
            .iter()
            .map(|&v| (v as f64 * 65535.0).round().clamp(0.0, 65535.0) as u16)
            .collect(),
    }
    .encode()
}

pub fn decode_soft_pgm(bytes: &[u8]) -> Result<SoftMask> {
    let pgm = Pgm::decode(bytes)?;
    let scale = pgm.maxval as f32;
    SoftMask::new(
        pgm.width,
        pgm.height,
        pgm.samples.iter().map(|&s| s as f32 / scale).collect(),
    )
}

/// Greyscale PNG preview of a PGM mask.
pub fn pgm_to_png(bytes: &[u8]) -> Result<Vec<u8>> {
    let pgm = Pgm::decode(bytes)?;
    let scale = 255.0 / pgm.maxval as f64;
    let img = image::GrayImage::from_fn(pgm.width as u32, pgm.height as u32, |x, y| {
        let s = pgm.samples[y as usize * pgm.width + x as usize];
        image::Luma([(s as f64 * scale).round() as u8])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

// ---------------------------------------------------------------------------
// DMG1

/// `"DMG1"`, then `u32` LE C, H, W, then `C·H·W` `f32` LE values.
pub fn encode_dmg1(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * grid.len());
    out.extend_from_slice(DMG1_MAGIC);
    for d in [grid.channels, grid.height, grid.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dmg1(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() < 16 || &bytes[..4] != DMG1_MAGIC {
        return Err(Error::format("dmg1", "missing DMG1 header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c * h * w;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::format(
            "dmg1",
            format!("expected {} payload bytes, found {}", 4 * n, bytes.len() - 16),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Grid::from_vec(c, h, w, values)
}

pub fn save_dmg1(path: &Path, grid: &Grid) -> Result<()> {
    write_bytes(path, &encode_dmg1(grid))
}

pub fn load_dmg1(path: &Path) -> Result<Grid> {
    decode_dmg1(&read_bytes(path)?)
}

// ---------------------------------------------------------------------------
// Flat parameter blobs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON sidecar describing how a flat little-endian `f32` blob splits into
/// named tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSidecar {
    pub format: String,
    pub kind: String,
    pub tensors: Vec<TensorShape>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Named tensors in order, with sidecar metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorBundle {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorShape, Vec<f32>)>,
}

impl TensorBundle {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        TensorBundle {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, values: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.tensors.push((
            TensorShape {
                name: name.to_string(),
                shape,
            },
            values,
        ));
    }

    pub fn get(&self, name: &str) -> Result<&[f32]> {
        self.tensors
            .iter()
            .find(|(s, _)| s.name == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::format("tensor bundle", format!("missing tensor {name:?}")))
    }

    pub fn encode(&self) -> (Vec<u8>, BlobSidecar) {
        let mut blob = Vec::new();
        for (_, values) in &self.tensors {
            for v in values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sidecar = BlobSidecar {
            format: "f32le".into(),
            kind: self.kind.clone(),
            tensors: self.tensors.iter().map(|(s, _)| s.clone()).collect(),
            meta: self.meta.clone(),
        };
        (blob, sidecar)
    }

    pub fn decode(blob: &[u8], sidecar: &BlobSidecar) -> Result<Self> {
        if sidecar.format != "f32le" {
            return Err(Error::format("blob sidecar", format!("unsupported format {}", sidecar.format)));
        }
        let total: usize = sidecar.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if blob.len() != 4 * total {
            return Err(Error::format(
                "blob",
                format!("sidecar describes {} floats, blob holds {} bytes", total, blob.len()),
            ));
        }
        let mut floats = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let tensors = sidecar
            .tensors
            .iter()
            .map(|t| {
                let n = t.shape.iter().product();
                (t.clone(), floats.by_ref().take(n).collect())
            })
            .collect();
        Ok(TensorBundle {
            kind: sidecar.kind.clone(),
            meta: sidecar.meta.clone(),
            tensors,
        })
    }

    /// Writes `path` (blob) and `path` with `.json` appended (sidecar).
    pub fn save(&self, path: &Path) -> Result<()> {
        let (blob, sidecar) = self.encode();
        write_bytes(path, &blob)?;
        write_bytes(&sidecar_path(path), &serde_json::to_vec_pretty(&sidecar)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let blob = read_bytes(path)?;
        let sidecar: BlobSidecar = serde_json::from_slice(&read_bytes(&sidecar_path(path))?)?;
        Self::decode(&blob, &sidecar)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
