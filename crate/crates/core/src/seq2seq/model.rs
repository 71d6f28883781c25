use super::{Branch, ModelSpec};
use crate::error::Result;
use crate::lstm::LstmParams;
use crate::params::{prefixed, prefixed_mut, ParamSet};
use crate::tensor::{uniform_init, RngState, Tensor};

const TAG_ENCODER: u64 = 0x656e_6300;
const TAG_RECON: u64 = 0x7265_6300;
const TAG_FUTURE: u64 = 0x6675_7400;
const TAG_READOUT: u64 = 0x100;

/// A decoder stack and its linear readout `frame = unit(W h_top + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub layers: Vec<LstmParams>,
    /// `[input_dim × hidden]`
    pub readout_w: Tensor,
    /// `[input_dim]`
    pub readout_b: Tensor,
}

impl Decoder {
    fn build(spec: &ModelSpec, rng: &RngState, tag: u64) -> Result<Self> {
        let layers = build_stack(spec, rng, tag)?;
        let mut r = rng.fork(tag + TAG_READOUT);
        Ok(Self {
            layers,
            readout_w: uniform_init(&[spec.input_dim, spec.hidden_dim], spec.hidden_dim, &mut r)?,
            readout_b: Tensor::zeros(&[spec.input_dim]),
        })
    }

    fn zeros(spec: &ModelSpec) -> Self {
        Self {
            layers: zero_stack(spec),
            readout_w: Tensor::zeros(&[spec.input_dim, spec.hidden_dim]),
            readout_b: Tensor::zeros(&[spec.input_dim]),
        }
    }

    fn tensors<'a>(&'a self, name: &str) -> Vec<(String, &'a Tensor)> {
        let mut out: Vec<_> = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(l, p)| prefixed(&format!("{name}.{l}"), p.tensors()))
            .collect();
        out.push((format!("{name}.readout_w"), &self.readout_w));
        out.push((format!("{name}.readout_b"), &self.readout_b));
        out
    }

    fn tensors_mut<'a>(&'a mut self, name: &str) -> Vec<(String, &'a mut Tensor)> {
        let mut out: Vec<_> = self
            .layers
            .iter_mut()
            .enumerate()
            .flat_map(|(l, p)| prefixed_mut(&format!("{name}.{l}"), p.tensors_mut()))
            .collect();
        out.push((format!("{name}.readout_w"), &mut self.readout_w));
        out.push((format!("{name}.readout_b"), &mut self.readout_b));
        out
    }
}

fn build_stack(spec: &ModelSpec, rng: &RngState, tag: u64) -> Result<Vec<LstmParams>> {
    (0..spec.layers)
        .map(|l| {
            let input = if l == 0 { spec.input_dim } else { spec.hidden_dim };
            LstmParams::init(input, spec.hidden_dim, &mut rng.fork(tag + l as u64))
        })
        .collect()
}

fn zero_stack(spec: &ModelSpec) -> Vec<LstmParams> {
    (0..spec.layers)
        .map(|l| {
            let input = if l == 0 { spec.input_dim } else { spec.hidden_dim };
            LstmParams::zeros(input, spec.hidden_dim)
        })
        .collect()
}

/// Encoder stack plus whichever decoders the variant calls for. The decoders
/// never share parameters with the encoder or with each other.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub encoder: Vec<LstmParams>,
    pub recon: Option<Decoder>,
    pub future: Option<Decoder>,
}

impl Model {
    /// Instantiates `spec`. The encoder and each decoder draw from their own
    /// child stream of `rng`, so variants built from the same seed share
    /// identical encoder (and matching decoder) weights.
    pub fn build(spec: &ModelSpec, rng: &RngState) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            encoder: build_stack(spec, rng, TAG_ENCODER)?,
            recon: spec
                .variant
                .has_recon()
                .then(|| Decoder::build(spec, rng, TAG_RECON))
                .transpose()?,
            future: spec
                .variant
                .has_future()
                .then(|| Decoder::build(spec, rng, TAG_FUTURE))
                .transpose()?,
        })
    }

    /// Same structure as [`Model::build`] with every entry zero; used as a
    /// gradient accumulator.
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            spec: spec.clone(),
            encoder: zero_stack(spec),
            recon: spec.variant.has_recon().then(|| Decoder::zeros(spec)),
            future: spec.variant.has_future().then(|| Decoder::zeros(spec)),
        }
    }

    pub fn decoder(&self, branch: Branch) -> Option<&Decoder> {
        match branch {
            Branch::Recon => self.recon.as_ref(),
            Branch::Future => self.future.as_ref(),
        }
    }

    pub fn decoder_mut(&mut self, branch: Branch) -> Option<&mut Decoder> {
        match branch {
            Branch::Recon => self.recon.as_mut(),
            Branch::Future => self.future.as_mut(),
        }
    }
}

impl ParamSet for Model {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<_> = self
            .encoder
            .iter()
            .enumerate()
            .flat_map(|(l, p)| prefixed(&format!("encoder.{l}"), p.tensors()))
            .collect();
        if let Some(d) = &self.recon {
            out.extend(d.tensors("recon"));
        }
        if let Some(d) = &self.future {
            out.extend(d.tensors("future"));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<_> = self
            .encoder
            .iter_mut()
            .enumerate()
            .flat_map(|(l, p)| prefixed_mut(&format!("encoder.{l}"), p.tensors_mut()))
            .collect();
        if let Some(d) = &mut self.recon {
            out.extend(d.tensors_mut("recon"));
        }
        if let Some(d) = &mut self.future {
            out.extend(d.tensors_mut("future"));
        }
        out
    }
}
