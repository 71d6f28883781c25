//! Sequence classifier: a stacked LSTM with a softmax readout at every time
//! step, trained on fixed-length blocks of a video.
//!
//! Dropout acts on the connections between layers (frame → layer 0,
//! layer `l` → layer `l+1`, top layer → readout) and never on the recurrent
//! `h → h` path. A mask is drawn once per sequence and reused at every step.
//! Retained activations are scaled by `1/(1-p)` at train time, so evaluation
//! uses the weights as they are.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::lstm::stack::{StackBackward, StackForward};
use crate::lstm::{LstmParams, LstmState, StepCache};
use crate::movingmnist::{gen_labels, LabelScheme, SequenceStream};
use crate::objectives::{softmax_rows, softmax_xent};
use crate::params::{prefixed, prefixed_mut, ParamSet};
use crate::tensor::{io as tensor_io, kernels, uniform_init, RngState, Tensor};
use crate::trainer::{sgd_momentum_step, Checkpoint, OptState, SgdConfig};

const TAG_LAYER: u64 = 0x636c_6100;
const TAG_READOUT: u64 = 0x636c_6200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
    /// Frames per classification block.
    pub block_len: usize,
    /// Offset between consecutive blocks of a video.
    pub stride: usize,
}

impl ClassifierSpec {
    /// Dropout 0.5, 16-frame blocks, stride 8.
    pub fn new(layers: usize, hidden_dim: usize, input_dim: usize, num_classes: usize) -> Self {
        Self {
            layers,
            hidden_dim,
            input_dim,
            num_classes,
            dropout_p: 0.5,
            block_len: 16,
            stride: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.input_dim == 0 || self.num_classes == 0 {
            bail!(
                Parameter,
                "layers, hidden_dim, input_dim and num_classes must be positive ({}, {}, {}, {})",
                self.layers,
                self.hidden_dim,
                self.input_dim,
                self.num_classes
            );
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            bail!(Parameter, "dropout_p must lie in [0, 1), got {}", self.dropout_p);
        }
        if self.block_len == 0 || self.stride == 0 || self.stride > self.block_len {
            bail!(
                Parameter,
                "need 0 < stride <= block_len (stride {}, block_len {})",
                self.stride,
                self.block_len
            );
        }
        Ok(())
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Where the LSTM weights of a classifier came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Random,
    /// Copied from the encoder of a checkpoint; see [`checkpoint_id`].
    Pretrained { checkpoint: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub spec: ClassifierSpec,
    pub layers: Vec<LstmParams>,
    /// `[K × hidden]`
    pub readout_w: Tensor,
    /// `[K]`
    pub readout_b: Tensor,
    pub provenance: Provenance,
}

impl ClassifierModel {
    fn zeros_like(&self) -> Self {
        let s = &self.spec;
        Self {
            spec: s.clone(),
            layers: (0..s.layers).map(|l| LstmParams::zeros(s.layer_input(l), s.hidden_dim)).collect(),
            readout_w: Tensor::zeros(&[s.num_classes, s.hidden_dim]),
            readout_b: Tensor::zeros(&[s.num_classes]),
            provenance: self.provenance.clone(),
        }
    }
}

impl ParamSet for ClassifierModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<_> = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(l, p)| prefixed(&format!("lstm.{l}"), p.tensors()))
            .collect();
        out.push(("readout_w".into(), &self.readout_w));
        out.push(("readout_b".into(), &self.readout_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<_> = self
            .layers
            .iter_mut()
            .enumerate()
            .flat_map(|(l, p)| prefixed_mut(&format!("lstm.{l}"), p.tensors_mut()))
            .collect();
        out.push(("readout_w".into(), &mut self.readout_w));
        out.push(("readout_b".into(), &mut self.readout_b));
        out
    }
}

/// Identifies a checkpoint by seed, step and a CRC of its encoder weights.
pub fn checkpoint_id(ck: &Checkpoint) -> String {
    let mut h = crc32fast::Hasher::new();
    for p in &ck.model.encoder {
        for (_, t) in p.tensors() {
            for v in t.data() {
                h.update(&v.to_le_bytes());
            }
        }
    }
    format!("seed{}-step{}-{:08x}", ck.config.seed, ck.step, h.finalize())
}

/// Builds a classifier. With `init_from`, the LSTM layers are copies of the
/// checkpoint's encoder; the readout is always freshly drawn from
/// `U[±1/sqrt(hidden)]` with a zero bias.
pub fn classifier_build(spec: &ClassifierSpec, init_from: Option<&Checkpoint>, rng: &mut RngState) -> Result<ClassifierModel> {
    spec.validate()?;
    let base = RngState::new(rng.next_u64());
    let (layers, provenance) = match init_from {
        Some(ck) => {
            let enc = &ck.model.encoder;
            if enc.len() != spec.layers {
                bail!(
                    Parameter,
                    "checkpoint encoder has {} layers, classifier wants {}",
                    enc.len(),
                    spec.layers
                );
            }
            for (l, p) in enc.iter().enumerate() {
                let want = LstmParams::zeros(spec.layer_input(l), spec.hidden_dim);
                for ((name, got), (_, exp)) in p.tensors().into_iter().zip(want.tensors()) {
                    if got.shape() != exp.shape() {
                        bail!(
                            Parameter,
                            "checkpoint tensor encoder.{l}.{name} has shape {:?}, classifier expects {:?}",
                            got.shape(),
                            exp.shape()
                        );
                    }
                }
            }
            (
                enc.clone(),
                Provenance::Pretrained {
                    checkpoint: checkpoint_id(ck),
                },
            )
        }
        None => {
            let layers = (0..spec.layers)
                .map(|l| LstmParams::init(spec.layer_input(l), spec.hidden_dim, &mut base.fork(TAG_LAYER + l as u64)))
                .collect::<Result<_>>()?;
            (layers, Provenance::Random)
        }
    };
    let mut r = base.fork(TAG_READOUT);
    Ok(ClassifierModel {
        spec: spec.clone(),
        layers,
        readout_w: uniform_init(&[spec.num_classes, spec.hidden_dim], spec.hidden_dim, &mut r)?,
        readout_b: Tensor::zeros(&[spec.num_classes]),
        provenance,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// Dropout masks are drawn and applied.
    Train,
    Eval,
}

/// One dropout pattern per sequence of a batch. Entries are `0` or `1/(1-p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    /// `layers[l]` multiplies the input of layer `l`, `[batch × fan_in]`.
    pub layers: Vec<Vec<f64>>,
    /// Multiplies the top layer's `h` on its way to the readout, `[batch × hidden]`.
    pub readout: Vec<f64>,
}

impl DropoutMasks {
    pub fn sample(spec: &ClassifierSpec, batch: usize, rng: &mut RngState) -> Self {
        let keep = 1.0 - spec.dropout_p;
        let scale = 1.0 / keep;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.bernoulli(keep) { scale } else { 0.0 })
                .collect()
        };
        let layers = (0..spec.layers).map(|l| draw(batch * spec.layer_input(l))).collect();
        let readout = draw(batch * spec.hidden_dim);
        Self { layers, readout }
    }
}

/// Activations of a classifier forward pass kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ClassifierTrace {
    /// `[T × batch × K]`
    pub logits: Tensor,
    /// `[t][layer]`
    pub caches: Vec<Vec<StepCache>>,
    pub masks: Option<DropoutMasks>,
}

impl ClassifierTrace {
    /// Hidden output of `layer` at every step, `[T × batch × hidden]`.
    pub fn hidden(&self, layer: usize) -> Vec<Tensor> {
        self.caches.iter().map(|c| c[layer].h()).collect()
    }
}

/// Per-step logits `[T × batch × K]`. Train mode draws one dropout mask per
/// sequence from `rng`; eval mode neither masks nor scales.
pub fn classifier_forward(m: &ClassifierModel, frames: &Tensor, mode: ClassifierMode, rng: &mut RngState) -> Result<Tensor> {
    let masks = match mode {
        ClassifierMode::Train => Some(DropoutMasks::sample(&m.spec, batch_of(m, frames)?, rng)),
        ClassifierMode::Eval => None,
    };
    Ok(classifier_trace(m, frames, masks, |_, _| {})?.logits)
}

fn batch_of(m: &ClassifierModel, frames: &Tensor) -> Result<usize> {
    let s = frames.shape();
    if frames.ndim() != 3 || s[0] == 0 || s[1] == 0 || s[2] != m.spec.input_dim {
        bail!(
            Dimension,
            "classifier: expected [T × batch × {}], got {s:?}",
            m.spec.input_dim
        );
    }
    Ok(s[1])
}

/// Forward pass with explicit masks. `observer(t, masks)` sees the masks
/// actually applied at step `t`.
pub fn classifier_trace(
    m: &ClassifierModel,
    frames: &Tensor,
    masks: Option<DropoutMasks>,
    mut observer: impl FnMut(usize, Option<&DropoutMasks>),
) -> Result<ClassifierTrace> {
    let batch = batch_of(m, frames)?;
    let (t_len, h, k) = (frames.shape()[0], m.spec.hidden_dim, m.spec.num_classes);
    if let Some(mk) = &masks {
        let ok = mk.layers.len() == m.spec.layers
            && mk.layers.iter().enumerate().all(|(l, v)| v.len() == batch * m.spec.layer_input(l))
            && mk.readout.len() == batch * h;
        if !ok {
            bail!(Dimension, "dropout masks do not match batch {batch} and the classifier layout");
        }
    }
    let stack = StackForward::new(&m.layers);
    let mut states = vec![LstmState::zeros(batch, h); m.spec.layers];
    let mut caches = Vec::with_capacity(t_len);
    let mut logits = Vec::with_capacity(t_len * batch * k);
    let readout_t = kernels::transpose(m.readout_w.data(), k, h);
    for t in 0..t_len {
        observer(t, masks.as_ref());
        let (next, c) = stack.step(Some(frames.row(t)), &states, masks.as_ref().map(|mk| mk.layers.as_slice()));
        let top = readout_input(next.last().unwrap().h.data(), masks.as_ref());
        let mut z = vec![0.0; batch * k];
        for row in z.chunks_mut(k) {
            row.copy_from_slice(m.readout_b.data());
        }
        kernels::matmul_acc(&top, &readout_t, &mut z, batch, h, k);
        logits.extend_from_slice(&z);
        states = next;
        caches.push(c);
    }
    Ok(ClassifierTrace {
        logits: Tensor::new(vec![t_len, batch, k], logits)?,
        caches,
        masks,
    })
}

fn readout_input(h_top: &[f64], masks: Option<&DropoutMasks>) -> Vec<f64> {
    match masks {
        Some(mk) => h_top.iter().zip(&mk.readout).map(|(a, b)| a * b).collect(),
        None => h_top.to_vec(),
    }
}

/// Mean over time steps of the batch-averaged softmax cross-entropy, with
/// every step sharing the sequence label.
pub fn classifier_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (t_len, batch, k) = match logits.shape() {
        &[t, b, k] if b == labels.len() && t > 0 => (t, b, k),
        s => bail!(Dimension, "classifier_loss: logits {s:?} for {} labels", labels.len()),
    };
    let scale = 1.0 / (t_len * batch) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for t in 0..t_len {
        let step = Tensor::new(vec![batch, k], logits.row(t).to_vec())?;
        let r = softmax_xent(&step, labels)?.scaled(scale);
        total += r.total;
        grad.extend_from_slice(r.grad.data());
    }
    Ok((total, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Loss and gradient of a traced forward pass. The masks recorded in the
/// trace are part of the function being differentiated.
pub fn classifier_backward(m: &ClassifierModel, trace: &ClassifierTrace, labels: &[usize]) -> Result<(f64, ClassifierModel)> {
    let (loss, dz_all) = classifier_loss(&trace.logits, labels)?;
    let (batch, h, k) = (labels.len(), m.spec.hidden_dim, m.spec.num_classes);
    let mut grads = m.zeros_like();
    let masks = trace.masks.as_ref();
    let mut back = StackBackward::new(&m.layers, batch);
    for t in (0..trace.caches.len()).rev() {
        let dz = dz_all.row(t);
        let top = readout_input(trace.caches[t].last().unwrap().h().data(), masks);
        kernels::matmul_tn_acc(dz, &top, grads.readout_w.data_mut(), batch, k, h);
        for row in dz.chunks(k) {
            kernels::axpy(1.0, row, grads.readout_b.data_mut());
        }
        let mut dh = vec![0.0; batch * h];
        kernels::matmul_acc(dz, m.readout_w.data(), &mut dh, batch, k, h);
        if let Some(mk) = masks {
            dh.iter_mut().zip(&mk.readout).for_each(|(a, b)| *a *= b);
        }
        back.step(&trace.caches[t], Some(&dh), masks.map(|mk| mk.layers.as_slice()));
    }
    grads.layers = back.finish().0;
    Ok((loss, grads))
}

/// Start offsets of the blocks `predict_video` averages over.
pub fn block_starts(len: usize, spec: &ClassifierSpec) -> Result<Vec<usize>> {
    if len < spec.block_len {
        bail!(Usage, "video has {len} frames, fewer than the block length {}", spec.block_len);
    }
    Ok((0..=len - spec.block_len).step_by(spec.stride).collect())
}

/// Class of a whole video `[L × input_dim]`: softmax outputs are averaged
/// over the steps of each block, then over blocks. Ties go to the lowest id.
pub fn predict_video(m: &ClassifierModel, frames: &Tensor) -> Result<(usize, Vec<f64>)> {
    if frames.ndim() != 2 || frames.shape()[1] != m.spec.input_dim {
        bail!(
            Dimension,
            "predict_video: expected [L × {}], got {:?}",
            m.spec.input_dim,
            frames.shape()
        );
    }
    let (t_len, d, k) = (m.spec.block_len, m.spec.input_dim, m.spec.num_classes);
    let starts = block_starts(frames.shape()[0], &m.spec)?;
    let nb = starts.len();
    let mut data = Vec::with_capacity(t_len * nb * d);
    for t in 0..t_len {
        for &s in &starts {
            data.extend_from_slice(frames.row(s + t));
        }
    }
    let blocks = Tensor::new(vec![t_len, nb, d], data)?;
    let logits = classifier_trace(m, &blocks, None, |_, _| {})?.logits;
    let mut per_block = vec![0.0; nb * k];
    for t in 0..t_len {
        let p = softmax_rows(logits.row(t), k);
        kernels::axpy(1.0 / t_len as f64, &p, &mut per_block);
    }
    let mut probs = vec![0.0; k];
    for row in per_block.chunks(k) {
        kernels::axpy(1.0 / nb as f64, row, &mut probs);
    }
    Ok((argmax(&probs), probs))
}

/// Index of the largest entry; the first one wins a tie.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Videos with one class label each.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledSet {
    /// `[N × L × input_dim]`
    pub frames: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// JSON sidecar describing the labels of an SVT1 video tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub num_classes: usize,
    pub labels: Vec<usize>,
}

impl LabelledSet {
    pub fn new(frames: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if frames.ndim() != 3 || frames.shape()[0] != labels.len() {
            bail!(
                Dimension,
                "labelled set: {} labels for frames {:?}",
                labels.len(),
                frames.shape()
            );
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            bail!(Data, "label {l} outside 0..{num_classes}");
        }
        Ok(Self { frames, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn video_len(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn video(&self, i: usize) -> Tensor {
        self.frames.slice_row(i)
    }

    /// Reads external percepts: an SVT1 tensor `[N × L × D]` and a JSON
    /// [`LabelFile`].
    pub fn load(frames: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        let t = tensor_io::load(frames)?;
        let lf: LabelFile = serde_json::from_slice(&std::fs::read(labels)?)?;
        Self::new(t, lf.labels, lf.num_classes)
    }

    /// Walks a sequence stream from its start until every class holds
    /// `per_class` examples, keeping them in generation order.
    pub fn balanced(stream: &SequenceStream, scheme: LabelScheme, per_class: usize, max_draws: u64) -> Result<Self> {
        let k = scheme.num_classes();
        let mut counts = vec![0usize; k];
        let mut videos = Vec::with_capacity(k * per_class);
        let mut labels = Vec::with_capacity(k * per_class);
        let mut n = 0;
        while labels.len() < k * per_class {
            if n == max_draws {
                bail!(Data, "could not fill {per_class} examples per class within {max_draws} draws");
            }
            let seq = stream.sequence_at(n);
            n += 1;
            let y = gen_labels(&seq, scheme)?;
            if counts[y] < per_class {
                counts[y] += 1;
                labels.push(y);
                videos.push(seq.frames);
            }
        }
        Self::new(Tensor::stack(&videos)?, labels, k)
    }

    /// The first `n` sequences of a stream, whatever their labels.
    pub fn generated(stream: &SequenceStream, scheme: LabelScheme, n: u64) -> Result<Self> {
        let mut videos = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let seq = stream.sequence_at(i);
            labels.push(gen_labels(&seq, scheme)?);
            videos.push(seq.frames);
        }
        if videos.is_empty() {
            bail!(Usage, "cannot build an empty labelled set");
        }
        Self::new(Tensor::stack(&videos)?, labels, scheme.num_classes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_clip_norm: Option<f64>,
    /// Drives minibatch sampling, crop offsets and dropout masks.
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            grad_clip_norm: self.grad_clip_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Parameter, "batch_size must be positive");
        }
        self.sgd().validate()
    }
}

/// Trains every weight of `m` (copied ones included) on random
/// `block_len`-frame crops of the labelled videos. Returns the per-step
/// training loss.
pub fn finetune(m: &mut ClassifierModel, data: &LabelledSet, cfg: &FinetuneConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        bail!(Usage, "finetune needs at least one labelled video");
    }
    if data.input_dim() != m.spec.input_dim || data.num_classes != m.spec.num_classes {
        bail!(
            Dimension,
            "data has input_dim {} and {} classes, classifier has {} and {}",
            data.input_dim(),
            data.num_classes,
            m.spec.input_dim,
            m.spec.num_classes
        );
    }
    let t_len = m.spec.block_len;
    if data.video_len() < t_len {
        bail!(Usage, "videos have {} frames, fewer than the block length {t_len}", data.video_len());
    }
    let sgd = cfg.sgd();
    let mut opt = OptState::new(m);
    let mut rng = RngState::new(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    let (b, d) = (cfg.batch_size, m.spec.input_dim);
    for _ in 0..cfg.steps {
        let picks: Vec<(usize, usize)> = (0..b)
            .map(|_| (rng.below(data.len()), rng.below(data.video_len() - t_len + 1)))
            .collect();
        let mut frames = Vec::with_capacity(t_len * b * d);
        for t in 0..t_len {
            for &(i, s) in &picks {
                let start = ((i * data.video_len()) + s + t) * d;
                frames.extend_from_slice(&data.frames.data()[start..start + d]);
            }
        }
        let frames = Tensor::new(vec![t_len, b, d], frames)?;
        let labels: Vec<usize> = picks.iter().map(|&(i, _)| data.labels[i]).collect();
        let masks = DropoutMasks::sample(&m.spec, b, &mut rng);
        let trace = classifier_trace(m, &frames, Some(masks), |_, _| {})?;
        let (loss, grads) = classifier_backward(m, &trace, &labels)?;
        sgd_momentum_step(m, &grads, &mut opt, &sgd)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Fraction of videos whose [`predict_video`] class matches the label.
pub fn accuracy(m: &ClassifierModel, data: &LabelledSet) -> Result<f64> {
    if data.is_empty() {
        bail!(Usage, "accuracy of an empty set");
    }
    let mut hits = 0;
    for i in 0..data.len() {
        if predict_video(m, &data.video(i))?.0 == data.labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
