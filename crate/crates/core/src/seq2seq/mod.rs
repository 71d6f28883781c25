//! LSTM encoder-decoder models over frame sequences.
//!
//! Frames are `[T × batch × input_dim]` tensors. The encoder runs from a zero
//! state; each decoder layer starts from a copy of the matching encoder
//! layer's final `(h, c)`. That copied state is the only path from the input
//! to the decoders, apart from the frame inputs of conditional decoders.
//!
//! Losses are summed over pixels and time steps and averaged over the batch.

mod model;
mod spec;

pub use model::{Decoder, Model};
pub use spec::{Branch, Mode, ModelSpec, OutputUnit, Variant};

use crate::error::{bail, Error, Result};
use crate::lstm::stack::{StackBackward, StackForward};
use crate::lstm::{LstmState, StepCache};
use crate::objectives::{logistic_xent, squared_loss, LossReport};
use crate::tensor::{kernels, sigmoid, Tensor};

/// Input frames `[T_in × B × D]` and, for models with a future branch, the
/// frames that follow them `[T_future × B × D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub input: Tensor,
    pub future: Option<Tensor>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.input.shape().get(1).copied().unwrap_or(0)
    }
}

/// Reverses a `[T × …]` tensor along its leading axis.
pub fn reverse_time(frames: &Tensor) -> Tensor {
    let t = frames.shape().first().copied().unwrap_or(0);
    let mut data = Vec::with_capacity(frames.len());
    for i in (0..t).rev() {
        data.extend_from_slice(frames.row(i));
    }
    Tensor::from_parts(frames.shape().to_vec(), data)
}

fn check_frames(frames: &Tensor, len: usize, dim: usize, what: &str) -> Result<usize> {
    if frames.ndim() != 3 || frames.shape()[0] != len || frames.shape()[2] != dim || frames.shape()[1] == 0 {
        bail!(
            Dimension,
            "{what}: expected [{len} × batch × {dim}], got {:?}",
            frames.shape()
        );
    }
    Ok(frames.shape()[1])
}

/// Runs the encoder over every input frame and returns the final state of
/// each layer (the learned representation) with the per-step caches,
/// indexed `[t][layer]`.
pub fn encode(m: &Model, frames: &Tensor) -> Result<(Vec<LstmState>, Vec<Vec<StepCache>>)> {
    let batch = check_frames(frames, m.spec.t_in, m.spec.input_dim, "encode")?;
    let stack = StackForward::new(&m.encoder);
    let mut states = vec![LstmState::zeros(batch, m.spec.hidden_dim); m.spec.layers];
    let mut caches = Vec::with_capacity(m.spec.t_in);
    for t in 0..m.spec.t_in {
        let (next, c) = stack.step(Some(frames.row(t)), &states, None);
        states = next;
        caches.push(c);
    }
    Ok((states, caches))
}

/// Frames emitted by one decoder.
#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// After the output unit, `[T_out × batch × input_dim]`.
    pub frames: Tensor,
    /// Readout pre-activations, same shape.
    pub preact: Tensor,
    /// `[t][layer]`
    pub caches: Vec<Vec<StepCache>>,
}

/// Unrolls one decoder for `t_out` steps from `init`.
///
/// The first step always reads a zero frame. Later steps read a zero frame
/// (unconditioned), `teacher[t-1]` (conditional, `Mode::Train`) or the
/// decoder's own previous output (conditional, `Mode::Generate`).
pub fn decode(
    m: &Model,
    branch: Branch,
    init: &[LstmState],
    t_out: usize,
    teacher: Option<&Tensor>,
    mode: Mode,
) -> Result<DecodeOutput> {
    let dec = m
        .decoder(branch)
        .ok_or_else(|| Error::Usage(format!("{:?} model has no {branch:?} decoder", m.spec.variant)))?;
    if init.len() != dec.layers.len() {
        bail!(
            Dimension,
            "decoder has {} layers but {} initial states were given",
            dec.layers.len(),
            init.len()
        );
    }
    let batch = init[0].batch();
    let (d, h) = (m.spec.input_dim, m.spec.hidden_dim);
    let conditional = m.spec.conditional(branch);
    let teacher = match (conditional, mode, teacher) {
        (true, Mode::Train, None) => {
            bail!(Usage, "conditional {branch:?} decoder in train mode needs teacher frames")
        }
        (true, Mode::Train, Some(t)) => {
            check_frames(t, t_out, d, "teacher")?;
            if t.shape()[1] != batch {
                bail!(Dimension, "teacher batch {} vs state batch {batch}", t.shape()[1]);
            }
            Some(t)
        }
        _ => None,
    };

    let stack = StackForward::new(&dec.layers);
    let readout_t = kernels::transpose(dec.readout_w.data(), d, h);
    let mut states = init.to_vec();
    let mut caches = Vec::with_capacity(t_out);
    let mut preact = Vec::with_capacity(t_out * batch * d);
    let mut frames = Vec::with_capacity(t_out * batch * d);
    let mut prev: Option<Vec<f64>> = None;
    for t in 0..t_out {
        let x: Option<&[f64]> = match (t, conditional, mode) {
            (0, _, _) | (_, false, _) => None,
            (_, true, Mode::Train) => Some(teacher.expect("checked above").row(t - 1)),
            (_, true, Mode::Generate) => prev.as_deref(),
        };
        let (next, c) = stack.step(x, &states, None);
        let mut z = Vec::with_capacity(batch * d);
        for _ in 0..batch {
            z.extend_from_slice(dec.readout_b.data());
        }
        kernels::matmul_acc(next.last().unwrap().h.data(), &readout_t, &mut z, batch, h, d);
        let y: Vec<f64> = match m.spec.output_unit {
            OutputUnit::Logistic => z.iter().map(|&v| sigmoid(v)).collect(),
            OutputUnit::Linear => z.clone(),
        };
        preact.extend_from_slice(&z);
        frames.extend_from_slice(&y);
        prev = Some(y);
        states = next;
        caches.push(c);
    }
    let shape = vec![t_out, batch, d];
    let frames = Tensor::from_parts(shape.clone(), frames);
    if !frames.is_finite() {
        return Err(Error::NonFinite("decode"));
    }
    Ok(DecodeOutput {
        frames,
        preact: Tensor::from_parts(shape, preact),
        caches,
    })
}

#[derive(Clone, Debug)]
pub struct BranchTrace {
    pub output: DecodeOutput,
    pub target: Tensor,
    /// Batch-averaged; `grad` is with respect to `output.preact`.
    pub loss: LossReport,
}

/// Everything [`backward`] needs, plus the emitted frames and losses.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub batch: usize,
    pub encoder: Vec<Vec<StepCache>>,
    pub representation: Vec<LstmState>,
    /// Emits the input in reverse order.
    pub recon: Option<BranchTrace>,
    pub future: Option<BranchTrace>,
}

impl ForwardTrace {
    pub fn recon_loss(&self) -> f64 {
        self.recon.as_ref().map_or(0.0, |b| b.loss.total)
    }

    pub fn future_loss(&self) -> f64 {
        self.future.as_ref().map_or(0.0, |b| b.loss.total)
    }

    /// Unweighted sum of the branch losses.
    pub fn total_loss(&self) -> f64 {
        [&self.recon, &self.future]
            .into_iter()
            .flatten()
            .fold(0.0, |acc, b| acc + b.loss.total)
    }

    pub fn branch(&self, branch: Branch) -> Option<&BranchTrace> {
        match branch {
            Branch::Recon => self.recon.as_ref(),
            Branch::Future => self.future.as_ref(),
        }
    }
}

fn branch_loss(unit: OutputUnit, out: &DecodeOutput, target: &Tensor, batch: usize) -> Result<LossReport> {
    let report = match unit {
        OutputUnit::Logistic => logistic_xent(&out.preact, target)?,
        OutputUnit::Linear => squared_loss(&out.frames, target)?,
    };
    Ok(report.scaled(1.0 / batch as f64))
}

/// Encodes once and runs every decoder the model has from the same copied
/// representation. `frames_future` is required when the model predicts at
/// least one future frame.
pub fn composite_forward(
    m: &Model,
    frames_in: &Tensor,
    frames_future: Option<&Tensor>,
    mode: Mode,
) -> Result<ForwardTrace> {
    let (representation, encoder) = encode(m, frames_in)?;
    let batch = frames_in.shape()[1];
    let (d, unit) = (m.spec.input_dim, m.spec.output_unit);

    let recon = match &m.recon {
        Some(_) => {
            let target = reverse_time(frames_in);
            let output = decode(m, Branch::Recon, &representation, m.spec.t_in, Some(&target), mode)?;
            let loss = branch_loss(unit, &output, &target, batch)?;
            Some(BranchTrace { output, target, loss })
        }
        None => None,
    };

    let future = match &m.future {
        Some(_) => {
            let t_f = m.spec.t_future;
            let target = match (t_f, frames_future) {
                (0, _) => Tensor::zeros(&[0, batch, d]),
                (_, Some(f)) => {
                    check_frames(f, t_f, d, "future frames")?;
                    if f.shape()[1] != batch {
                        bail!(Dimension, "future batch {} vs input batch {batch}", f.shape()[1]);
                    }
                    f.clone()
                }
                (_, None) => bail!(Usage, "model predicts {t_f} future frames but none were given"),
            };
            let output = decode(m, Branch::Future, &representation, t_f, Some(&target), mode)?;
            let loss = branch_loss(unit, &output, &target, batch)?;
            Some(BranchTrace { output, target, loss })
        }
        None => None,
    };

    Ok(ForwardTrace {
        mode,
        batch,
        encoder,
        representation,
        recon,
        future,
    })
}

/// Backpropagation through time for a training-mode trace.
///
/// Both decoders send their gradient into the shared encoder through the
/// copied state. Teacher frames are data, so no gradient flows into them.
pub fn backward(m: &Model, trace: &ForwardTrace) -> Result<Model> {
    if trace.mode != Mode::Train {
        bail!(Usage, "backward needs a train-mode trace");
    }
    let batch = trace.batch;
    let (d, h) = (m.spec.input_dim, m.spec.hidden_dim);
    // LSTM gradients come out of the BPTT accumulators; only the readouts
    // need zeroed storage up front.
    let readout = |_: &Decoder| Decoder {
        layers: Vec::new(),
        readout_w: Tensor::zeros(&[d, h]),
        readout_b: Tensor::zeros(&[d]),
    };
    let mut grads = Model {
        spec: m.spec.clone(),
        encoder: Vec::new(),
        recon: m.recon.as_ref().map(readout),
        future: m.future.as_ref().map(readout),
    };
    let mut enc_back = StackBackward::new(&m.encoder, batch);

    for branch in [Branch::Recon, Branch::Future] {
        let (Some(bt), Some(dec)) = (trace.branch(branch), m.decoder(branch)) else {
            continue;
        };
        let steps = bt.output.caches.len();
        let gdec = grads.decoder_mut(branch).expect("gradient model mirrors the model");
        let mut back = StackBackward::new(&dec.layers, batch);
        for t in (0..steps).rev() {
            let dz = bt.loss.grad.row(t);
            let h_top = bt.output.caches[t].last().unwrap().h();
            kernels::matmul_tn_acc(dz, h_top.data(), gdec.readout_w.data_mut(), batch, d, h);
            for row in dz.chunks(d) {
                kernels::axpy(1.0, row, gdec.readout_b.data_mut());
            }
            let mut dh_top = vec![0.0; batch * h];
            kernels::matmul_acc(dz, dec.readout_w.data(), &mut dh_top, batch, d, h);
            back.step(&bt.output.caches[t], Some(&dh_top), None);
        }
        let (layers, carry) = back.finish();
        gdec.layers = layers;
        enc_back.add_to_carry(&carry);
    }

    for caches in trace.encoder.iter().rev() {
        enc_back.step(caches, None, None);
    }
    grads.encoder = enc_back.finish().0;
    Ok(grads)
}

#[cfg(test)]
mod tests;
