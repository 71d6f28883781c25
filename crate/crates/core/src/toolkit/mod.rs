//! Experiment drivers behind the command-line tool: dataset export,
//! training, variant comparison, rollouts, weight images and the
//! labelled-data sweep. Every driver is a function of its manifest, seeds
//! and input files, so re-running one rewrites identical bytes.

pub mod classify;
pub mod compare;
pub mod export;
pub mod pgm;
pub mod rollout;
pub mod weights;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::trainer::{checkpoint_load, Checkpoint, DataFeed, TrainConfig, Trainer};
use classify::{classify_sweep, ClassifyProtocol};
use compare::{compare_variants, ModelSource};
use export::{export_dataset, GenerateOptions};
use rollout::{rollout, with_random_future, write_rollout};
use weights::{visualize_weights, write_weight_images, Geometry};

/// Sub-directories of an output directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputLayout {
    pub checkpoints: PathBuf,
    pub csv: PathBuf,
    pub img: PathBuf,
}

impl Default for OutputLayout {
    fn default() -> Self {
        Self {
            checkpoints: "checkpoints".into(),
            csv: "csv".into(),
            img: "img".into(),
        }
    }
}

/// Held-out evaluation settings shared by every model of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// Seed of the held-out sequence stream.
    pub heldout_seed: u64,
    pub heldout_count: usize,
    pub batch_size: usize,
    /// Reported quantities, for the record.
    pub metrics: Vec<String>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            heldout_seed: 1_000_000,
            heldout_count: 256,
            batch_size: 32,
            metrics: vec!["future_loss".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Generate { options: GenerateOptions },
    Train { config: TrainConfig },
    CompareVariants {
        base: TrainConfig,
        seeds: Vec<u64>,
        eval: EvalProtocol,
        /// Load `<dir>/<variant>/seed_<s>.svck` instead of training.
        checkpoints: Option<PathBuf>,
    },
    Rollout(RolloutProtocol),
    VisualizeWeights {
        checkpoint: PathBuf,
        top: usize,
        geometry: Option<Geometry>,
    },
    Classify { protocol: ClassifyProtocol, pretrained: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutProtocol {
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub max_units: usize,
    pub unit_seed: u64,
    /// Held-out stream and number of sequences to encode.
    pub heldout_seed: u64,
    pub sequences: usize,
    /// Replace the future decoder with random weights drawn from this seed.
    pub random_future: Option<u64>,
}

/// A named experiment, complete enough to reproduce its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub id: String,
    pub experiment: Experiment,
    #[serde(default)]
    pub layout: OutputLayout,
}

impl ExperimentManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `manifest.json` into `out`.
    pub fn save_into(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("manifest.json"), self.to_json()?)?;
        Ok(())
    }
}

/// Held-out input batch used by rollouts: the first `count` sequences of
/// the held-out stream for `seed`.
pub fn heldout_inputs(cfg: &TrainConfig, seed: u64, count: usize) -> Result<crate::tensor::Tensor> {
    if count == 0 {
        bail!(Usage, "need at least one held-out sequence");
    }
    Ok(DataFeed::heldout(cfg, seed)?.batch(0, count, &cfg.model)?.input)
}

fn load_existing(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        bail!(Usage, "checkpoint {} does not exist", path.display());
    }
    checkpoint_load(path)
}

/// Runs a manifest, writing `manifest.json` and every output under `out`.
pub fn run_manifest(m: &ExperimentManifest, out: &Path) -> Result<()> {
    m.save_into(out)?;
    let layout = &m.layout;
    match &m.experiment {
        Experiment::Generate { options } => {
            export_dataset(options, out, layout)?;
        }
        Experiment::Train { config } => {
            Trainer::new(config.clone())?.run(Some(out))?;
        }
        Experiment::CompareVariants { base, seeds, eval, checkpoints } => {
            let source = match checkpoints {
                Some(dir) => ModelSource::Load(dir.clone()),
                None => ModelSource::Train,
            };
            let report = compare_variants(base, seeds, eval, &source, Some(out), layout)?;
            for s in &report.summary {
                log::info!("#{} {}: {:.3} ± {:.3}", s.rank, s.variant.name(), s.mean, s.stderr);
            }
        }
        Experiment::Rollout(p) => {
            let ck = load_existing(&p.checkpoint)?;
            let model = match p.random_future {
                Some(seed) => with_random_future(&ck.model, seed)?,
                None => ck.model.clone(),
            };
            let input = heldout_inputs(&ck.config, p.heldout_seed, p.sequences)?;
            let r = rollout(&model, &input, p.steps, p.unit_seed, p.max_units)?;
            let side = Geometry::resolve(model.spec.input_dim, None)?.width;
            write_rollout(&r, side, out, layout)?;
        }
        Experiment::VisualizeWeights { checkpoint, top, geometry } => {
            let ck = load_existing(checkpoint)?;
            write_weight_images(&visualize_weights(&ck.model, *geometry, *top)?, out, layout)?;
        }
        Experiment::Classify { protocol, pretrained } => {
            let ck = load_existing(pretrained)?;
            classify_sweep(protocol, Some(&ck), Some(out), layout)?;
        }
    }
    Ok(())
}
