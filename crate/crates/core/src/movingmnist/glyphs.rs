//! Procedural handwritten-style digits for use when no IDX files are at hand.
//!
//! Each class is a fixed set of strokes on the unit square. Samples vary by
//! a random rotation, scale, slant, offset and pen width, and are rendered
//! with a one-pixel anti-aliased edge on a 28x28 grid, with the glyph inside
//! the central 20x20 box as in MNIST.

use std::f64::consts::PI;

use super::DigitBank;
use crate::error::Result;
use crate::tensor::{RngState, Tensor};

pub const GLYPH_SIZE: usize = 28;

type Stroke = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Stroke {
    (0..=24)
        .map(|k| {
            let a = 2.0 * PI * f64::from(k) / 24.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn strokes(digit: u8) -> Vec<Stroke> {
    let pl = |pts: &[(f64, f64)]| pts.to_vec();
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.32, 0.45)],
        1 => vec![pl(&[(0.32, 0.22), (0.52, 0.05), (0.52, 0.95)])],
        2 => vec![pl(&[
            (0.2, 0.25), (0.3, 0.1), (0.5, 0.05), (0.7, 0.1), (0.8, 0.28),
            (0.7, 0.5), (0.2, 0.95), (0.85, 0.95),
        ])],
        3 => vec![pl(&[
            (0.2, 0.1), (0.5, 0.05), (0.75, 0.15), (0.75, 0.35), (0.45, 0.5),
            (0.78, 0.62), (0.78, 0.85), (0.5, 0.95), (0.2, 0.88),
        ])],
        4 => vec![pl(&[(0.65, 0.95), (0.65, 0.05), (0.15, 0.65), (0.85, 0.65)])],
        5 => vec![pl(&[
            (0.8, 0.05), (0.3, 0.05), (0.25, 0.45), (0.55, 0.4), (0.78, 0.55),
            (0.78, 0.8), (0.55, 0.95), (0.2, 0.88),
        ])],
        6 => vec![pl(&[
            (0.7, 0.05), (0.4, 0.25), (0.25, 0.6), (0.3, 0.88), (0.5, 0.95),
            (0.72, 0.85), (0.75, 0.62), (0.55, 0.5), (0.3, 0.6),
        ])],
        7 => vec![pl(&[(0.15, 0.05), (0.85, 0.05), (0.4, 0.95)])],
        8 => vec![ellipse(0.5, 0.27, 0.25, 0.22), ellipse(0.5, 0.72, 0.3, 0.23)],
        _ => vec![ellipse(0.5, 0.3, 0.27, 0.25), pl(&[(0.77, 0.3), (0.6, 0.95)])],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (ex, ey) = (p.0 - a.0 - t * dx, p.1 - a.1 - t * dy);
    (ex * ex + ey * ey).sqrt()
}

/// Renders one random sample of `digit` as a `GLYPH_SIZE²` image.
pub fn render_glyph(digit: u8, rng: &mut RngState) -> Vec<f64> {
    let rot = rng.uniform(-12.0, 12.0).to_radians();
    let scale = rng.uniform(0.85, 1.05);
    let slant = rng.uniform(-0.25, 0.15);
    let (ox, oy) = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    let pen = rng.uniform(1.6, 2.8);

    // glyph unit square -> pixel coordinates, centered in the 20x20 box
    let (c, s) = (rot.cos(), rot.sin());
    let half = GLYPH_SIZE as f64 / 2.0;
    let map = |(x, y): (f64, f64)| {
        let (u, v) = ((x - 0.5 + slant * (0.5 - y)) * 20.0 * scale, (y - 0.5) * 20.0 * scale);
        (half + ox + c * u - s * v, half + oy + s * u + c * v)
    };
    let segments: Vec<((f64, f64), (f64, f64))> = strokes(digit)
        .iter()
        .flat_map(|st| st.windows(2).map(|w| (map(w[0]), map(w[1]))).collect::<Vec<_>>())
        .collect();

    let mut img = vec![0.0; GLYPH_SIZE * GLYPH_SIZE];
    for (i, px) in img.iter_mut().enumerate() {
        let p = ((i % GLYPH_SIZE) as f64 + 0.5, (i / GLYPH_SIZE) as f64 + 0.5);
        let d = segments.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
        *px = (pen / 2.0 + 0.5 - d).clamp(0.0, 1.0);
    }
    img
}

/// A bank of `n` procedural digits with uniformly drawn classes.
pub fn synthetic_bank(n: usize, seed: u64) -> Result<DigitBank> {
    let mut rng = RngState::new(seed);
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * GLYPH_SIZE * GLYPH_SIZE);
    for _ in 0..n {
        let digit = rng.below(10) as u8;
        labels.push(digit);
        data.extend(render_glyph(digit, &mut rng));
    }
    DigitBank::new(Tensor::new(vec![n, GLYPH_SIZE, GLYPH_SIZE], data)?, labels)
}
