//! Weight images: encoder input features and decoder output features,
//! strongest first.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pgm::{square_cols, tile_grid, GrayImage, Scaling, TileScale};
use super::OutputLayout;
use crate::error::{bail, Result};
use crate::seq2seq::Model;
use crate::tensor::{kernels, Tensor};

/// Frame shape used to reshape a weight vector into a tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
}

impl Geometry {
    /// `explicit`, or a square frame when `input_dim` is a perfect square.
    pub fn resolve(input_dim: usize, explicit: Option<Geometry>) -> Result<Self> {
        match explicit {
            Some(g) if g.width * g.height == input_dim => Ok(g),
            Some(g) => bail!(
                Usage,
                "geometry {}x{} does not cover input_dim {input_dim}",
                g.width,
                g.height
            ),
            None => {
                let side = (input_dim as f64).sqrt().round() as usize;
                if side * side != input_dim {
                    bail!(Usage, "input_dim {input_dim} is not a square; pass an explicit geometry");
                }
                Ok(Geometry { width: side, height: side })
            }
        }
    }
}

/// Indices of `vectors` by descending L2 norm; equal norms keep index order.
pub fn rank_by_l2(vectors: &[Vec<f64>]) -> Vec<usize> {
    let norms: Vec<f64> = vectors.iter().map(|v| kernels::sum_sq(v)).collect();
    let mut idx: Vec<usize> = (0..vectors.len()).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    idx
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightImage {
    /// File stem, e.g. `encoder_input_gate`.
    pub name: String,
    pub image: GrayImage,
    /// Unit shown in each tile slot.
    pub units: Vec<usize>,
    pub scales: Vec<TileScale>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ImageSidecar {
    units: Vec<usize>,
    /// Per tile, the weight values mapped to gray 0 and 255.
    scales: Vec<TileScale>,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
}

fn columns(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let tt = kernels::transpose(t.data(), r, c);
    tt.chunks(r).map(<[f64]>::to_vec).collect()
}

fn image(name: &str, tiles: &[Vec<f64>], units: &[usize], g: Geometry) -> Result<WeightImage> {
    let picked: Vec<Vec<f64>> = units.iter().map(|&u| tiles[u].clone()).collect();
    let (image, scales) = tile_grid(&picked, g.width, g.height, square_cols(picked.len()), Scaling::PerTile)?;
    Ok(WeightImage { name: name.to_string(), image, units: units.to_vec(), scales })
}

/// Encoder images for the cell input and the input, forget and output
/// gates of the first layer. Units are ranked once, by the L2 norm of their
/// cell-input weights, so slot `k` is the same unit in all four images.
/// Each decoder adds an image of its readout columns ranked by L2 norm.
pub fn visualize_weights(m: &Model, geometry: Option<Geometry>, top: usize) -> Result<Vec<WeightImage>> {
    let g = Geometry::resolve(m.spec.input_dim, geometry)?;
    let enc = &m.encoder[0];
    let hidden = m.spec.hidden_dim;
    if top > hidden {
        log::warn!("top-{top} requested but the model has {hidden} units; showing {hidden}");
    }
    let keep = top.min(hidden);
    let input = rows(&enc.w_xc);
    let units: Vec<usize> = rank_by_l2(&input).into_iter().take(keep).collect();
    let mut out = vec![
        image("encoder_input", &input, &units, g)?,
        image("encoder_input_gate", &rows(&enc.w_xi), &units, g)?,
        image("encoder_forget_gate", &rows(&enc.w_xf), &units, g)?,
        image("encoder_output_gate", &rows(&enc.w_xo), &units, g)?,
    ];
    for (name, dec) in [("recon_readout", &m.recon), ("future_readout", &m.future)] {
        if let Some(dec) = dec {
            let cols = columns(&dec.readout_w);
            let units: Vec<usize> = rank_by_l2(&cols).into_iter().take(keep).collect();
            out.push(image(name, &cols, &units, g)?);
        }
    }
    Ok(out)
}

/// Writes `img/<name>.pgm` and `img/<name>.json` for every image.
pub fn write_weight_images(images: &[WeightImage], out: &Path, layout: &OutputLayout) -> Result<()> {
    let dir = out.join(&layout.img);
    std::fs::create_dir_all(&dir)?;
    for w in images {
        w.image.save(dir.join(format!("{}.pgm", w.name)))?;
        let side = ImageSidecar { units: w.units.clone(), scales: w.scales.clone() };
        std::fs::write(dir.join(format!("{}.json", w.name)), serde_json::to_vec_pretty(&side)?)?;
    }
    Ok(())
}
