//! Binary PGM (P5) images and tiled layouts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height] }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }

    /// Parses a P5 file with maxval 255, allowing `#` comments in the header.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                bail!(Format, "truncated PGM header");
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            bail!(Format, "not a binary PGM (magic {:?})", fields[0]);
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| crate::error::Error::Format(format!("bad PGM field {s:?}")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            bail!(Format, "unsupported PGM maxval {maxval}");
        }
        // Exactly one whitespace byte separates the header from the raster.
        let body = &bytes[(pos + 1).min(bytes.len())..];
        if body.len() != width * height {
            bail!(Format, "PGM raster has {} bytes, expected {}", body.len(), width * height);
        }
        Ok(Self { width, height, pixels: body.to_vec() })
    }
}

/// Maps `v` from `[lo, hi]` onto `0..=255`, clamping outside values. A
/// degenerate range maps everything to mid-gray.
pub fn to_gray(v: f64, lo: f64, hi: f64) -> u8 {
    if !(hi > lo) {
        return 128;
    }
    (255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8
}

/// How tile values become gray levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scaling {
    /// One range for every tile.
    Fixed { lo: f64, hi: f64 },
    /// Each tile's own minimum and maximum map to 0 and 255.
    PerTile,
}

/// The value range mapped onto `[0, 255]` for one tile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileScale {
    pub min: f64,
    pub max: f64,
}

/// Lays `tiles` (each `tile_w × tile_h`, row-major) out left to right, top
/// to bottom, `cols` per row. The image is exactly the grid times the tile
/// size; unused grid cells stay black.
pub fn tile_grid(tiles: &[Vec<f64>], tile_w: usize, tile_h: usize, cols: usize, scaling: Scaling) -> Result<(GrayImage, Vec<TileScale>)> {
    if cols == 0 && !tiles.is_empty() {
        bail!(Usage, "tile grid needs at least one column");
    }
    if let Some(t) = tiles.iter().find(|t| t.len() != tile_w * tile_h) {
        bail!(Dimension, "tile has {} values, expected {tile_w}x{tile_h}", t.len());
    }
    let rows = if tiles.is_empty() { 0 } else { tiles.len().div_ceil(cols) };
    let cols = if tiles.is_empty() { 0 } else { cols };
    let mut img = GrayImage::new(cols * tile_w, rows * tile_h);
    let mut scales = Vec::with_capacity(tiles.len());
    for (n, tile) in tiles.iter().enumerate() {
        let (lo, hi) = match scaling {
            Scaling::Fixed { lo, hi } => (lo, hi),
            Scaling::PerTile => tile
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
        };
        scales.push(TileScale { min: lo, max: hi });
        let (gx, gy) = ((n % cols) * tile_w, (n / cols) * tile_h);
        for y in 0..tile_h {
            for x in 0..tile_w {
                img.pixels[(gy + y) * img.width + gx + x] = to_gray(tile[y * tile_w + x], lo, hi);
            }
        }
    }
    Ok((img, scales))
}

/// Columns for a roughly square grid of `n` tiles.
pub fn square_cols(n: usize) -> usize {
    (1..=n).find(|c| c * c >= n).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_and_header() {
        let img = GrayImage { width: 3, height: 2, pixels: vec![0, 10, 20, 30, 40, 255] };
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap(), img);
        let commented = b"P5\n# made by hand\n3 2\n255\n\x00\x0a\x14\x1e\x28\xff";
        assert_eq!(GrayImage::from_pgm(commented).unwrap(), img);
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::from_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }

    #[test]
    fn gray_mapping() {
        assert_eq!(to_gray(0.0, 0.0, 1.0), 0);
        assert_eq!(to_gray(1.0, 0.0, 1.0), 255);
        assert_eq!(to_gray(0.5, 0.0, 1.0), 128);
        assert_eq!(to_gray(7.0, 0.0, 1.0), 255);
        assert_eq!(to_gray(-7.0, 0.0, 1.0), 0);
        assert_eq!(to_gray(3.0, 3.0, 3.0), 128);
    }

    #[test]
    fn grid_layout_and_per_tile_scaling() {
        let tiles = vec![vec![0.0, 1.0, 2.0, 3.0], vec![-1.0, -1.0, 1.0, 1.0], vec![5.0; 4]];
        let (img, scales) = tile_grid(&tiles, 2, 2, 2, Scaling::PerTile).unwrap();
        assert_eq!((img.width, img.height), (4, 4));
        assert_eq!(scales[0], TileScale { min: 0.0, max: 3.0 });
        assert_eq!(&img.pixels[0..4], &[0, 85, 0, 0]);
        assert_eq!(&img.pixels[4..8], &[170, 255, 255, 255]);
        assert_eq!(&img.pixels[8..10], &[128, 128]);
        assert_eq!(&img.pixels[10..12], &[0, 0]);
        let (strip, _) = tile_grid(&tiles[..1], 2, 2, 1, Scaling::Fixed { lo: 0.0, hi: 3.0 }).unwrap();
        assert_eq!(strip.pixels, vec![0, 85, 170, 255]);
        let (empty, s) = tile_grid(&[], 2, 2, 0, Scaling::PerTile).unwrap();
        assert_eq!((empty.width, empty.height, s.len()), (0, 0, 0));
        assert!(tile_grid(&[vec![0.0; 3]], 2, 2, 1, Scaling::PerTile).is_err());
    }

    #[test]
    fn square_columns() {
        assert_eq!([0, 1, 2, 4, 5, 200].map(square_cols), [0, 1, 2, 2, 3, 15]);
    }
}
