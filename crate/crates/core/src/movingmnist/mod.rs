//! Bouncing-digit videos generated on the fly.
//!
//! Digits move in straight lines inside a square canvas and reflect off its
//! edges. Positions are continuous; frames stamp each digit at its rounded
//! position and combine overlaps with a pixelwise max.

mod bank;
mod glyphs;

use std::f64::consts::PI;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

pub use bank::{load_idx, parse_idx, DigitBank};
pub use glyphs::{render_glyph, synthetic_bank, GLYPH_SIZE};

use crate::error::{bail, Result};
use crate::seq2seq::Batch;
use crate::tensor::{RngState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub canvas: usize,
    pub num_digits: usize,
    pub seq_len: usize,
    pub vel_min: f64,
    pub vel_max: f64,
    pub binarize: bool,
    pub digit_size: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            canvas: 64,
            num_digits: 2,
            seq_len: 20,
            vel_min: 2.0,
            vel_max: 5.0,
            binarize: true,
            digit_size: 28,
        }
    }
}

impl GenConfig {
    /// 32x32 canvas, one 14x14 digit, 20 frames.
    pub fn desk() -> Self {
        Self { canvas: 32, num_digits: 1, digit_size: 14, ..Self::default() }
    }

    pub fn frame_len(&self) -> usize {
        self.canvas * self.canvas
    }

    /// Largest admissible coordinate of a digit's top-left corner.
    pub fn max_pos(&self) -> f64 {
        (self.canvas - self.digit_size) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.digit_size == 0 || self.canvas < self.digit_size {
            bail!(Parameter, "canvas {} must be at least digit size {} (> 0)", self.canvas, self.digit_size);
        }
        if self.seq_len < 2 {
            bail!(Parameter, "seq_len must be at least 2, got {}", self.seq_len);
        }
        if !(self.vel_min >= 0.0 && self.vel_min <= self.vel_max && self.vel_max.is_finite()) {
            bail!(Parameter, "need 0 <= vel_min <= vel_max, got [{}, {}]", self.vel_min, self.vel_max);
        }
        if self.vel_max > self.max_pos() {
            bail!(
                Parameter,
                "vel_max {} exceeds the free range {}; a step could bounce twice",
                self.vel_max,
                self.max_pos()
            );
        }
        Ok(())
    }
}

/// A freshly placed digit.
#[derive(Clone, Debug, PartialEq)]
pub struct Spawn {
    pub bank_index: usize,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

/// Draws a digit, a uniform position, and a velocity with uniform direction
/// and uniform speed in `[vel_min, vel_max]`.
pub fn spawn_digit(cfg: &GenConfig, rng: &mut RngState, bank: &DigitBank) -> Spawn {
    let bank_index = rng.below(bank.len());
    let hi = cfg.max_pos();
    let pos = [rng.uniform(0.0, hi), rng.uniform(0.0, hi)];
    let theta = 2.0 * PI * rng.unit();
    let speed = rng.uniform(cfg.vel_min, cfg.vel_max);
    Spawn { bank_index, pos, vel: [speed * theta.cos(), speed * theta.sin()] }
}

/// One step of motion with a single reflection at each wall.
pub fn step_dynamics(pos: [f64; 2], vel: [f64; 2], lo: f64, hi: f64) -> ([f64; 2], [f64; 2]) {
    let mut p = [0.0; 2];
    let mut v = vel;
    for a in 0..2 {
        p[a] = pos[a] + vel[a];
        if p[a] < lo {
            p[a] = 2.0 * lo - p[a];
            v[a] = -v[a];
        } else if p[a] > hi {
            p[a] = 2.0 * hi - p[a];
            v[a] = -v[a];
        }
    }
    (p, v)
}

/// Stamps each `digit_size²` image at its rounded `(x, y)` offset, combining
/// overlaps by max, then thresholds at 0.5 when `cfg.binarize`.
pub fn render_frame(cfg: &GenConfig, digits: &[&[f64]], positions: &[[f64; 2]]) -> Tensor {
    let (n, s) = (cfg.canvas, cfg.digit_size);
    let mut frame = vec![0.0f64; n * n];
    for (img, pos) in digits.iter().zip(positions) {
        let x0 = (pos[0].round().max(0.0) as usize).min(n - s);
        let y0 = (pos[1].round().max(0.0) as usize).min(n - s);
        for r in 0..s {
            let dst = &mut frame[(y0 + r) * n + x0..][..s];
            for (d, &v) in dst.iter_mut().zip(&img[r * s..(r + 1) * s]) {
                *d = d.max(v);
            }
        }
    }
    if cfg.binarize {
        for v in &mut frame {
            *v = if *v >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    Tensor::from_parts(vec![n * n], frame)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// Class of the first digit (10 classes).
    DigitIdentity,
    /// 45-degree sector of the first digit's initial direction (8 classes).
    MotionOctant,
}

impl LabelScheme {
    pub fn num_classes(self) -> usize {
        match self {
            LabelScheme::DigitIdentity => 10,
            LabelScheme::MotionOctant => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    /// `[seq_len × canvas²]`
    pub frames: Tensor,
    pub digit_ids: Vec<u8>,
    /// Per digit, the position at every frame.
    pub trajectories: Vec<Vec<[f64; 2]>>,
    /// Per digit, the velocity at every frame.
    pub velocities: Vec<Vec<[f64; 2]>>,
    pub motion_class: usize,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sector index of a direction angle in `[0, 2π)`, 45 degrees per sector.
pub fn octant(vel: [f64; 2]) -> usize {
    let theta = vel[1].atan2(vel[0]).rem_euclid(2.0 * PI);
    ((theta / (PI / 4.0)).floor() as usize).min(7)
}

pub fn gen_labels(seq: &VideoSequence, scheme: LabelScheme) -> Result<usize> {
    match scheme {
        LabelScheme::DigitIdentity => match seq.digit_ids.first() {
            Some(&d) => Ok(usize::from(d)),
            None => bail!(Usage, "sequence has no digit ids"),
        },
        LabelScheme::MotionOctant => match seq.velocities.first().and_then(|v| v.first()) {
            Some(&v) => Ok(octant(v)),
            None => bail!(Usage, "sequence has no trajectory metadata"),
        },
    }
}

pub fn gen_sequence(cfg: &GenConfig, rng: &mut RngState, bank: &DigitBank) -> Result<VideoSequence> {
    cfg.validate()?;
    if bank.size() != cfg.digit_size {
        bail!(Usage, "bank digits are {0}x{0}, config wants {1}x{1}", bank.size(), cfg.digit_size);
    }
    let spawns: Vec<Spawn> = (0..cfg.num_digits).map(|_| spawn_digit(cfg, rng, bank)).collect();
    let images: Vec<&[f64]> = spawns.iter().map(|s| bank.image(s.bank_index)).collect();
    let hi = cfg.max_pos();

    let mut trajectories: Vec<Vec<[f64; 2]>> = spawns.iter().map(|s| vec![s.pos]).collect();
    let mut velocities: Vec<Vec<[f64; 2]>> = spawns.iter().map(|s| vec![s.vel]).collect();
    for _ in 1..cfg.seq_len {
        for (traj, vels) in trajectories.iter_mut().zip(&mut velocities) {
            let (p, v) = step_dynamics(*traj.last().unwrap(), *vels.last().unwrap(), 0.0, hi);
            traj.push(p);
            vels.push(v);
        }
    }

    let mut data = Vec::with_capacity(cfg.seq_len * cfg.frame_len());
    for t in 0..cfg.seq_len {
        let pos: Vec<[f64; 2]> = trajectories.iter().map(|tr| tr[t]).collect();
        data.extend_from_slice(render_frame(cfg, &images, &pos).data());
    }
    let mut seq = VideoSequence {
        frames: Tensor::from_parts(vec![cfg.seq_len, cfg.frame_len()], data),
        digit_ids: spawns.iter().map(|s| bank.label(s.bank_index)).collect(),
        trajectories,
        velocities,
        motion_class: 0,
    };
    if cfg.num_digits > 0 {
        seq.motion_class = gen_labels(&seq, LabelScheme::MotionOctant)?;
    }
    Ok(seq)
}

/// Stacks frames `[start, start+len)` of every sequence into `[len × B × D]`.
pub fn stack_frames(seqs: &[VideoSequence], start: usize, len: usize) -> Result<Tensor> {
    let Some(first) = seqs.first() else {
        bail!(Usage, "no sequences to stack");
    };
    let d = first.frames.row_len();
    let b = seqs.len();
    let mut data = vec![0.0; len * b * d];
    for (j, s) in seqs.iter().enumerate() {
        if s.frames.row_len() != d || s.len() < start + len {
            bail!(Dimension, "sequence {j} cannot supply frames {start}..{}", start + len);
        }
        for t in 0..len {
            data[(t * b + j) * d..][..d].copy_from_slice(s.frames.row(start + t));
        }
    }
    Tensor::new(vec![len, b, d], data)
}

/// Splits sequences into encoder input (first `t_in` frames) and future
/// targets (the next `t_future`).
pub fn make_batch(seqs: &[VideoSequence], t_in: usize, t_future: usize) -> Result<Batch> {
    Ok(Batch {
        input: stack_frames(seqs, 0, t_in)?,
        future: if t_future > 0 { Some(stack_frames(seqs, t_in, t_future)?) } else { None },
    })
}

/// Deterministic, indexable stream of sequences: sequence `n` is generated
/// from its own generator derived from `(seed, n)`, so any range of the
/// stream can be produced independently and in any order.
#[derive(Clone, Debug)]
pub struct SequenceStream {
    cfg: GenConfig,
    bank: Arc<DigitBank>,
    seed: u64,
    next: u64,
}

const STREAM_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

impl SequenceStream {
    /// Box-downscales the bank to `cfg.digit_size` if needed.
    pub fn new(cfg: GenConfig, bank: &DigitBank, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let bank = Arc::new(bank.resized(cfg.digit_size)?);
        Ok(Self { cfg, bank, seed, next: 0 })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &DigitBank {
        &self.bank
    }

    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn seek(&mut self, n: u64) {
        self.next = n;
    }

    pub fn sequence_at(&self, n: u64) -> VideoSequence {
        let mut rng = RngState::new(self.seed).fork(n.wrapping_add(1).wrapping_mul(STREAM_MIX));
        gen_sequence(&self.cfg, &mut rng, &self.bank).expect("stream config validated at construction")
    }

    pub fn next_sequence(&mut self) -> VideoSequence {
        let s = self.sequence_at(self.next);
        self.next += 1;
        s
    }

    pub fn next_batch(&mut self, batch: usize) -> Vec<VideoSequence> {
        (0..batch).map(|_| self.next_sequence()).collect()
    }

    /// Moves generation to a worker thread that keeps up to `capacity`
    /// batches ready. Batches arrive in stream order.
    pub fn prefetch(self, batch: usize, capacity: usize) -> Prefetch {
        let (tx, rx) = sync_channel(capacity.max(1));
        let mut stream = self;
        let worker = std::thread::spawn(move || {
            while tx.send(stream.next_batch(batch)).is_ok() {}
        });
        Prefetch { rx: Some(rx), worker: Some(worker) }
    }
}

pub struct Prefetch {
    rx: Option<Receiver<Vec<VideoSequence>>>,
    worker: Option<JoinHandle<()>>,
}

impl Iterator for Prefetch {
    type Item = Vec<VideoSequence>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for Prefetch {
    fn drop(&mut self) {
        self.rx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
