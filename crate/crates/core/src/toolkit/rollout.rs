//! Long free-running generation from the future decoder, with per-unit
//! activity rasters and a per-step output-variance trace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::export::frame_strip;
use super::pgm::{tile_grid, Scaling, TileScale};
use super::OutputLayout;
use crate::error::{bail, Result};
use crate::lstm::StepCache;
use crate::seq2seq::{decode, encode, Branch, Mode, Model};
use crate::tensor::{kernels, RngState, Tensor};

/// Activity quantities recorded per unit and step, in raster order.
pub const RASTERS: [&str; 6] = ["input_gate", "forget_gate", "output_gate", "cell_input", "cell", "output"];

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Frames emitted for the first sequence, `[steps × D]`.
    pub frames: Tensor,
    /// Per step, the pixel variance of each emitted frame averaged over the batch.
    pub variance: Vec<f64>,
    /// Sampled top-layer units, in raster row order.
    pub units: Vec<usize>,
    /// `rasters[q][row][t]` for quantity `RASTERS[q]` of the first sequence.
    pub rasters: Vec<Vec<Vec<f64>>>,
}

/// The first `min(max_units, hidden)` entries of a seeded permutation of
/// the hidden units.
pub fn sample_units(hidden: usize, max_units: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..hidden).collect();
    let mut rng = RngState::new(seed);
    for i in (1..hidden).rev() {
        idx.swap(i, rng.below(i + 1));
    }
    if max_units > hidden {
        log::warn!("{max_units} units requested, the layer has {hidden}");
    }
    idx.truncate(max_units.min(hidden));
    idx
}

/// Encodes `input` (`[T_in × B × D]`) and lets the future decoder run for
/// `steps` steps: a conditional decoder reads its own previous frame, an
/// unconditioned one reads zeros.
pub fn rollout(m: &Model, input: &Tensor, steps: usize, unit_seed: u64, max_units: usize) -> Result<Rollout> {
    if m.future.is_none() {
        bail!(Usage, "rollout needs a model with a future decoder");
    }
    let (state, _) = encode(m, input)?;
    let out = decode(m, Branch::Future, &state, steps, None, Mode::Generate)?;
    let (batch, d) = (input.shape()[1], m.spec.input_dim);
    let variance = (0..steps)
        .map(|t| {
            out.frames.row(t).chunks(d).map(kernels::variance).sum::<f64>() / batch as f64
        })
        .collect();
    let frames = Tensor::new(vec![steps, d], (0..steps).flat_map(|t| out.frames.row(t)[..d].to_vec()).collect())?;
    let units = sample_units(m.spec.hidden_dim, max_units, unit_seed);
    let top = m.spec.layers - 1;
    let pick = |c: &StepCache, q: usize, u: usize| -> f64 {
        match q {
            0 => c.i.data()[u],
            1 => c.f.data()[u],
            2 => c.o.data()[u],
            3 => c.g.data()[u],
            4 => c.c.data()[u],
            _ => c.o.data()[u] * c.c.data()[u].tanh(),
        }
    };
    let rasters = (0..RASTERS.len())
        .map(|q| {
            units
                .iter()
                .map(|&u| out.caches.iter().map(|c| pick(&c[top], q, u)).collect())
                .collect()
        })
        .collect();
    Ok(Rollout { frames, variance, units, rasters })
}

/// Replaces the future decoder with freshly initialized weights from `seed`.
pub fn with_random_future(m: &Model, seed: u64) -> Result<Model> {
    let fresh = Model::build(&m.spec, &RngState::new(seed))?;
    Ok(Model { future: fresh.future, ..m.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub units: Vec<usize>,
    pub steps: usize,
    /// Gray-level range per raster, keyed like the image names.
    pub scales: Vec<(String, TileScale)>,
}

/// Writes `img/rollout_frames.pgm`, one `img/rollout_<quantity>.pgm` per
/// raster (rows are units, columns are steps), `img/rollout_rasters.json`
/// and `csv/rollout_variance.csv`.
pub fn write_rollout(r: &Rollout, side: usize, out: &Path, layout: &OutputLayout) -> Result<()> {
    let img = out.join(&layout.img);
    let csv = out.join(&layout.csv);
    std::fs::create_dir_all(&img)?;
    std::fs::create_dir_all(&csv)?;
    frame_strip(&r.frames, side)?.save(img.join("rollout_frames.pgm"))?;
    let steps = r.frames.shape()[0];
    let mut scales = Vec::new();
    for (q, name) in RASTERS.iter().enumerate() {
        let tile: Vec<f64> = r.rasters[q].iter().flatten().copied().collect();
        let scaling = match q {
            0..=2 => Scaling::Fixed { lo: 0.0, hi: 1.0 },
            3 | 5 => Scaling::Fixed { lo: -1.0, hi: 1.0 },
            _ => {
                let a = tile.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                Scaling::Fixed { lo: -a, hi: a }
            }
        };
        let (image, s) = tile_grid(&[tile], steps, r.units.len(), 1, scaling)?;
        image.save(img.join(format!("rollout_{name}.pgm")))?;
        scales.push((name.to_string(), s[0]));
    }
    let side_car = RasterSidecar { units: r.units.clone(), steps, scales };
    std::fs::write(img.join("rollout_rasters.json"), serde_json::to_vec_pretty(&side_car)?)?;
    let mut s = String::from("step,variance\n");
    for (t, v) in r.variance.iter().enumerate() {
        s.push_str(&format!("{},{}\n", t + 1, v));
    }
    std::fs::write(csv.join("rollout_variance.csv"), s)?;
    Ok(())
}
