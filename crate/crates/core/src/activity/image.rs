//! Binary PGM/PPM export of activity-map fields.
//!
//! A cell value `v` becomes the byte `round(255 * clamp(v, 0, 1))`; colored
//! composites scale the palette color of the strongest field in each cell.

use std::path::Path;

use super::ActivityMap;
use crate::error::{Error, Result};

/// Fixed per-class palette (RGB in `[0, 1]`), cycled for more classes.
pub const PALETTE: [[f64; 3]; 12] = [
    [0.902, 0.098, 0.294],
    [0.235, 0.706, 0.294],
    [1.0, 0.882, 0.098],
    [0.0, 0.51, 0.784],
    [0.961, 0.51, 0.188],
    [0.569, 0.118, 0.706],
    [0.275, 0.941, 0.941],
    [0.941, 0.196, 0.902],
    [0.824, 0.961, 0.235],
    [0.98, 0.745, 0.831],
    [0.0, 0.502, 0.502],
    [0.667, 0.431, 0.157],
];

pub fn to_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn nonzero(&self) -> bool {
        self.pixels.iter().any(|&p| p != 0)
    }
}

impl RgbImage {
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_ppm()).map_err(|e| Error::io(path, e))
    }
}

/// One field as a grayscale image.
pub fn field_image(map: &ActivityMap, field: usize) -> GrayImage {
    GrayImage {
        width: map.width(),
        height: map.height(),
        pixels: map.field(field).into_iter().map(to_byte).collect(),
    }
}

/// Color composite of the fields `fields`: each cell takes the palette color
/// of its strongest field (lowest index on ties) scaled by that field's value.
/// Palette entries are assigned by position within `fields`.
pub fn composite_image(map: &ActivityMap, fields: std::ops::Range<usize>) -> RgbImage {
    let mut pixels = Vec::with_capacity(map.width() * map.height() * 3);
    for y in 0..map.height() {
        for x in 0..map.width() {
            let mut best: Option<(usize, f64)> = None;
            for (slot, f) in fields.clone().enumerate() {
                let v = map.get(y, x, f);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((slot, v));
                }
            }
            match best {
                Some((slot, v)) => {
                    let color = PALETTE[slot % PALETTE.len()];
                    let v = v.clamp(0.0, 1.0);
                    pixels.extend(color.iter().map(|c| to_byte(c * v)));
                }
                None => pixels.extend([0, 0, 0]),
            }
        }
    }
    RgbImage {
        width: map.width(),
        height: map.height(),
        pixels,
    }
}
