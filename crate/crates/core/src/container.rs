//! Flat `f32` array container and PNG export.
//!
//! Layout (all little-endian):
//!
//! | bytes | content                              |
//! |-------|--------------------------------------|
//! | 0..4  | magic `MOSF`                         |
//! | 4..8  | `h` (`u32`)                          |
//! | 8..12 | `w` (`u32`)                          |
//! | 12..16| `c` (`u32`)                          |
//! | 16..  | `c · h · w` `f32`, channel-major     |

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MOSF";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FlatArray {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl FlatArray {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::Shape(format!(
                "{} values for a {h}x{w}x{c} array",
                data.len()
            )));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        for v in [self.h, self.w, self.c] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || bytes[..4] != MAGIC {
            return Err(Error::Format("not a flat array container (bad magic)".into()));
        }
        let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let expect = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(c))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("container dimensions overflow".into()))?;
        if bytes.len() - HEADER_LEN != expect {
            return Err(Error::Format(format!(
                "container declares {h}x{w}x{c} but holds {} payload bytes",
                bytes.len() - HEADER_LEN
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self { h, w, c, data })
    }
}

pub fn write_flat(path: impl AsRef<Path>, array: &FlatArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_flat(path: impl AsRef<Path>) -> Result<FlatArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FlatArray::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PngStyle {
    #[default]
    Grayscale,
    Colormap,
}

/// Min–max normalizes one channel to `0..=255`; a constant channel maps to 0.
pub fn normalize_channel(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let span = (hi - lo) as f64;
    values
        .iter()
        .map(|&v| ((v - lo) as f64 / span * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Piecewise-linear blue → cyan → yellow → red ramp.
fn colormap(level: u8) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 255.0],
        [0.0, 255.0, 255.0],
        [255.0, 255.0, 0.0],
        [255.0, 0.0, 0.0],
    ];
    let t = level as f64 / 255.0 * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (STOPS[i][k] * (1.0 - f) + STOPS[i + 1][k] * f).round() as u8;
    }
    out
}

/// Writes one PNG per channel as `<prefix>_c<k>.png` and returns the paths.
pub fn export_png(array: &FlatArray, prefix: impl AsRef<Path>, style: PngStyle) -> Result<Vec<PathBuf>> {
    let prefix = prefix.as_ref();
    let mut written = Vec::with_capacity(array.c);
    for k in 0..array.c {
        let levels = normalize_channel(array.channel(k));
        let path = PathBuf::from(format!("{}_c{k}.png", prefix.display()));
        let (w, h) = (array.w as u32, array.h as u32);
        let res = match style {
            PngStyle::Grayscale => {
                let img: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([levels[(y * w + x) as usize]]));
                img.save(&path)
            }
            PngStyle::Colormap => {
                let img: RgbImage =
                    ImageBuffer::from_fn(w, h, |x, y| Rgb(colormap(levels[(y * w + x) as usize])));
                img.save(&path)
            }
        };
        res.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
