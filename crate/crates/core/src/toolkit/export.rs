//! Dataset export: an SVT1 video tensor with a JSON sidecar and an optional
//! preview strip.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::{tile_grid, Scaling};
use super::OutputLayout;
use crate::error::{bail, Result};
use crate::movingmnist::{gen_labels, GenConfig, LabelScheme, SequenceStream};
use crate::tensor::{io as tensor_io, Tensor};
use crate::trainer::DigitSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub gen: GenConfig,
    pub digits: DigitSource,
    pub seed: u64,
    pub count: u64,
    /// Scheme of the `labels` field of the sidecar.
    pub scheme: LabelScheme,
    pub preview: bool,
}

/// Sidecar of an exported dataset. Its `num_classes` and `labels` fields
/// make it readable as a classifier label file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub num_sequences: u64,
    pub seq_len: usize,
    pub input_dim: usize,
    pub label_scheme: LabelScheme,
    pub num_classes: usize,
    pub labels: Vec<usize>,
    pub digit_ids: Vec<Vec<u8>>,
    pub motion_class: Vec<usize>,
    pub generator: GenConfig,
    pub digits: DigitSource,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportPaths {
    pub tensor: PathBuf,
    pub sidecar: PathBuf,
    pub preview: Option<PathBuf>,
}

/// Writes `dataset.svt` (`[N × seq_len × canvas²]`) and `dataset.json` under
/// `out`, plus `img/preview.pgm` with the first sequence's frames side by
/// side when requested.
pub fn export_dataset(opts: &GenerateOptions, out: &Path, layout: &OutputLayout) -> Result<ExportPaths> {
    if opts.count == 0 {
        bail!(Usage, "generate needs a positive sequence count");
    }
    let bank = opts.digits.load()?;
    let stream = SequenceStream::new(opts.gen.clone(), &bank, opts.seed)?;
    let mut frames = Vec::with_capacity(opts.count as usize);
    let mut sidecar = DatasetSidecar {
        num_sequences: opts.count,
        seq_len: opts.gen.seq_len,
        input_dim: opts.gen.frame_len(),
        label_scheme: opts.scheme,
        num_classes: opts.scheme.num_classes(),
        labels: Vec::new(),
        digit_ids: Vec::new(),
        motion_class: Vec::new(),
        generator: opts.gen.clone(),
        digits: opts.digits.clone(),
        seed: opts.seed,
    };
    for n in 0..opts.count {
        let seq = stream.sequence_at(n);
        sidecar.labels.push(gen_labels(&seq, opts.scheme)?);
        sidecar.digit_ids.push(seq.digit_ids.clone());
        sidecar.motion_class.push(seq.motion_class);
        frames.push(seq.frames);
    }
    std::fs::create_dir_all(out)?;
    let paths = ExportPaths {
        tensor: out.join("dataset.svt"),
        sidecar: out.join("dataset.json"),
        preview: opts.preview.then(|| out.join(&layout.img).join("preview.pgm")),
    };
    tensor_io::save(&paths.tensor, &Tensor::stack(&frames)?)?;
    std::fs::write(&paths.sidecar, serde_json::to_vec_pretty(&sidecar)?)?;
    if let Some(p) = &paths.preview {
        std::fs::create_dir_all(p.parent().unwrap())?;
        frame_strip(&frames[0], opts.gen.canvas)?.save(p)?;
    }
    Ok(paths)
}

/// Frames of a `[T × side²]` sequence tiled horizontally, values in `[0, 1]`.
pub fn frame_strip(frames: &Tensor, side: usize) -> Result<super::pgm::GrayImage> {
    let t = frames.shape().first().copied().unwrap_or(0);
    let tiles: Vec<Vec<f64>> = (0..t).map(|i| frames.row(i).to_vec()).collect();
    Ok(tile_grid(&tiles, side, side, t, Scaling::Fixed { lo: 0.0, hi: 1.0 })?.0)
}
