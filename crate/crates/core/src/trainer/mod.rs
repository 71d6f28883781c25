//! Minibatch BPTT training, momentum SGD, gradient checking and checkpoints.
//!
//! Training is deterministic given the config: the model is initialized from
//! a child stream of `seed`, and the batch for step `k` is always sequences
//! `k·B .. (k+1)·B` of an index-addressable data stream.

mod checkpoint;
mod gradcheck;
mod optim;
mod reference;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_from_bytes, checkpoint_load, checkpoint_save, checkpoint_to_bytes, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{
    grad_check, grad_check_with, relative_error, GradCheckOptions, GradCheckReport, TensorCheck,
    GRAD_CHECK_FLOOR, GRAD_CHECK_MAX_PARAMS,
};
pub use optim::{sgd_momentum_step, OptState, SgdConfig, StepStats};

pub use crate::seq2seq::Batch;

use crate::error::{bail, Result};
use crate::movingmnist::{load_idx, make_batch, synthetic_bank, DigitBank, GenConfig, SequenceStream};
use crate::seq2seq::{backward, composite_forward, Mode, Model, ModelSpec, Variant};
use crate::tensor::{io as tensor_io, RngState, Tensor};

const TAG_MODEL: u64 = 0x6d6f_6465_6c00;
const TAG_DATA: u64 = 0x6461_7461_0000;
const TAG_HELDOUT: u64 = 0x6865_6c64_0000;

/// Where the digit images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DigitSource {
    /// Procedurally drawn digits.
    Synthetic { count: usize, seed: u64 },
    /// IDX image and label files.
    Idx { images: PathBuf, labels: PathBuf },
}

impl Default for DigitSource {
    fn default() -> Self {
        DigitSource::Synthetic { count: 2000, seed: 0 }
    }
}

impl DigitSource {
    pub fn load(&self) -> Result<DigitBank> {
        match self {
            DigitSource::Synthetic { count, seed } => synthetic_bank(*count, *seed),
            DigitSource::Idx { images, labels } => load_idx(images, labels),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Bouncing digits generated on the fly.
    Generated { gen: GenConfig, digits: DigitSource },
    /// An SVT1 tensor of sequences `[N × T × D]`.
    Dataset { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_clip_norm: Option<f64>,
    /// Halve the learning rate every `max_steps / 3` steps.
    pub lr_decay: bool,
    pub max_steps: u64,
    /// Held-out evaluation period in steps; 0 disables.
    pub eval_every: u64,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub model: ModelSpec,
    pub data: DataSource,
}

impl TrainConfig {
    /// Desk preset for `variant`: 32x32 canvas, one 14x14 digit, 128 units,
    /// 10 frames in and 10 out.
    pub fn desk(variant: Variant, seed: u64) -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            grad_clip_norm: Some(10.0),
            lr_decay: true,
            max_steps: 2000,
            eval_every: 0,
            checkpoint_every: 0,
            seed,
            model: ModelSpec::desk(variant),
            data: DataSource::Generated { gen: GenConfig::desk(), digits: DigitSource::default() },
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { learning_rate: self.learning_rate, momentum: self.momentum, grad_clip_norm: self.grad_clip_norm }
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let period = self.max_steps / 3;
        if !self.lr_decay || period == 0 {
            return self.learning_rate;
        }
        self.learning_rate * 0.5f64.powi((step / period).min(1000) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd().validate()?;
        self.model.validate()?;
        if self.batch_size == 0 {
            bail!(Parameter, "batch_size must be positive");
        }
        if let DataSource::Generated { gen, .. } = &self.data {
            gen.validate()?;
            if gen.frame_len() != self.model.input_dim {
                bail!(Parameter, "frames have {} pixels, model input_dim is {}", gen.frame_len(), self.model.input_dim);
            }
            let need = self.model.t_in + self.model.future_len();
            if gen.seq_len < need {
                bail!(Parameter, "sequences have {} frames, model needs {need}", gen.seq_len);
            }
        }
        Ok(())
    }
}

/// Per-step training losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub recon: f64,
    pub future: f64,
    pub total: f64,
}

/// Supplies batch `k` of a run.
#[derive(Clone, Debug)]
pub enum DataFeed {
    Stream(SequenceStream),
    /// `[N × T × D]`
    Dataset(Tensor),
}

impl DataFeed {
    pub fn open(cfg: &TrainConfig) -> Result<Self> {
        Self::open_with_seed(cfg, RngState::new(cfg.seed).fork(TAG_DATA).seed())
    }

    /// A feed over sequences never used for training with `cfg.seed`.
    pub fn heldout(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        Self::open_with_seed(cfg, RngState::new(seed).fork(TAG_HELDOUT).seed())
    }

    fn open_with_seed(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        match &cfg.data {
            DataSource::Generated { gen, digits } => Ok(DataFeed::Stream(SequenceStream::new(gen.clone(), &digits.load()?, seed)?)),
            DataSource::Dataset { path } => {
                let t = tensor_io::load(path)?;
                if t.ndim() != 3 || t.shape()[0] == 0 {
                    bail!(Format, "dataset {} must be a non-empty [N x T x D] tensor", path.display());
                }
                let need = cfg.model.t_in + cfg.model.future_len();
                if t.shape()[1] < need || t.shape()[2] != cfg.model.input_dim {
                    bail!(Dimension, "dataset shape {:?} cannot feed {need} frames of {}", t.shape(), cfg.model.input_dim);
                }
                Ok(DataFeed::Dataset(t))
            }
        }
    }

    /// Sequences `first .. first + count`, cycling over a finite dataset.
    pub fn batch(&self, first: u64, count: usize, spec: &ModelSpec) -> Result<Batch> {
        let (t_in, t_f) = (spec.t_in, spec.future_len());
        match self {
            DataFeed::Stream(s) => {
                let seqs: Vec<_> = (0..count as u64).map(|j| s.sequence_at(first + j)).collect();
                make_batch(&seqs, t_in, t_f)
            }
            DataFeed::Dataset(t) => {
                let (n, d) = (t.shape()[0] as u64, t.shape()[2]);
                let seq_stride = t.shape()[1] * d;
                let gather = |start: usize, len: usize| {
                    let mut data = vec![0.0; len * count * d];
                    for j in 0..count {
                        let s = ((first + j as u64) % n) as usize;
                        for k in 0..len {
                            let src = &t.data()[s * seq_stride + (start + k) * d..][..d];
                            data[(k * count + j) * d..][..d].copy_from_slice(src);
                        }
                    }
                    Tensor::new(vec![len, count, d], data)
                };
                Ok(Batch { input: gather(0, t_in)?, future: if t_f > 0 { Some(gather(t_in, t_f)?) } else { None } })
            }
        }
    }
}

/// Mean held-out losses (recon, future, total) of `model` over `count`
/// sequences starting at `first`, evaluated in `mode`.
pub fn evaluate(model: &Model, feed: &DataFeed, first: u64, count: usize, batch: usize, mode: Mode) -> Result<LossRecord> {
    let mut acc = LossRecord { step: 0, recon: 0.0, future: 0.0, total: 0.0 };
    let mut done = 0;
    while done < count {
        let b = batch.min(count - done);
        let data = feed.batch(first + done as u64, b, &model.spec)?;
        let trace = composite_forward(model, &data.input, data.future.as_ref(), mode)?;
        let w = b as f64;
        acc.recon += trace.recon_loss() * w;
        acc.future += trace.future_loss() * w;
        acc.total += trace.total_loss() * w;
        done += b;
    }
    let n = count.max(1) as f64;
    Ok(LossRecord { step: 0, recon: acc.recon / n, future: acc.future / n, total: acc.total / n })
}

/// Owns the model, optimizer state and data feed of one training run.
pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    opt: OptState,
    feed: DataFeed,
    rng: RngState,
    history: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = RngState::new(cfg.seed);
        let model = Model::build(&cfg.model, &rng.fork(TAG_MODEL))?;
        let opt = OptState::new(&model);
        let feed = DataFeed::open(&cfg)?;
        Ok(Self { cfg, model, opt, feed, rng, history: Vec::new() })
    }

    /// Continues a run from a checkpoint.
    pub fn resume(ck: Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        let feed = DataFeed::open(&ck.config)?;
        Ok(Self { cfg: ck.config, model: ck.model, opt: ck.opt, feed, rng: ck.rng, history: ck.history })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn feed(&self) -> &DataFeed {
        &self.feed
    }

    pub fn steps_done(&self) -> u64 {
        self.opt.step
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn batch_at(&self, step: u64) -> Result<Batch> {
        let b = self.cfg.batch_size;
        self.feed.batch(step * b as u64, b, &self.cfg.model)
    }

    /// One forward/backward/update cycle. On error the model and optimizer
    /// are left as they were before the call.
    pub fn step(&mut self) -> Result<LossRecord> {
        let k = self.opt.step;
        let batch = self.batch_at(k)?;
        let trace = composite_forward(&self.model, &batch.input, batch.future.as_ref(), Mode::Train)?;
        let rec = LossRecord { step: k, recon: trace.recon_loss(), future: trace.future_loss(), total: trace.total_loss() };
        if !rec.total.is_finite() {
            bail!(Training, "non-finite loss at step {k}");
        }
        let grads = backward(&self.model, &trace)?;
        let sgd = SgdConfig { learning_rate: self.cfg.learning_rate_at(k), ..self.cfg.sgd() };
        let (mut model, mut opt) = (self.model.clone(), self.opt.clone());
        sgd_momentum_step(&mut model, &grads, &mut opt, &sgd)?;
        self.model = model;
        self.opt = opt;
        self.history.push(rec);
        Ok(rec)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.opt.step,
            model: self.model.clone(),
            opt: self.opt.clone(),
            rng: self.rng.clone(),
            history: self.history.clone(),
        }
    }

    /// Trains until `max_steps`. With `out`, writes `checkpoints/step_N.svck`
    /// every `checkpoint_every` steps, `checkpoints/final.svck` at the end,
    /// and `csv/loss.csv` alongside each checkpoint. A failing step aborts
    /// the run; checkpoints already on disk are kept.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Checkpoint> {
        let heldout = if self.cfg.eval_every > 0 { Some(DataFeed::heldout(&self.cfg, self.cfg.seed)?) } else { None };
        while self.opt.step < self.cfg.max_steps {
            let rec = self.step()?;
            let done = self.opt.step;
            if rec.step % 100 == 0 {
                log::debug!("step {} loss {:.3} (recon {:.3}, future {:.3})", rec.step, rec.total, rec.recon, rec.future);
            }
            if let Some(h) = &heldout {
                if done % self.cfg.eval_every == 0 {
                    let e = evaluate(&self.model, h, 0, 64, self.cfg.batch_size, Mode::Generate)?;
                    log::info!("step {done}: held-out loss {:.3} (recon {:.3}, future {:.3})", e.total, e.recon, e.future);
                }
            }
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && done % self.cfg.checkpoint_every == 0 {
                    self.write_outputs(dir, &format!("step_{done:06}.svck"))?;
                }
            }
        }
        if let Some(dir) = out {
            self.write_outputs(dir, "final.svck")?;
        }
        Ok(self.checkpoint())
    }

    fn write_outputs(&self, dir: &Path, name: &str) -> Result<()> {
        let ck_dir = dir.join("checkpoints");
        fs::create_dir_all(&ck_dir)?;
        checkpoint_save(&self.checkpoint(), ck_dir.join(name))?;
        fs::create_dir_all(dir.join("csv"))?;
        write_loss_csv(&self.history, dir.join("csv").join("loss.csv"))
    }
}

/// Runs `cfg` from scratch; see [`Trainer::run`].
pub fn train(cfg: TrainConfig, out: Option<&Path>) -> Result<Checkpoint> {
    Trainer::new(cfg)?.run(out)
}

pub fn write_loss_csv(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("step,recon_loss,future_loss,total\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.recon, r.future, r.total));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(s.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests;
