//! `SVCK` checkpoint container.
//!
//! Layout (integers little-endian):
//! magic `SVCK`, `u32` version, `u64` header length, UTF-8 JSON header,
//! `u32` record count, then per record a `u32` name length, the name and an
//! SVT1 tensor, and finally a `u32` CRC-32 of every preceding byte.
//!
//! Records are `model/<tensor>`, `opt/<tensor>` (momentum buffers) and
//! `history` (`[n × 4]`: step, recon, future, total).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LossRecord, OptState, TrainConfig};
use crate::error::{bail, Result};
use crate::params::ParamSet;
use crate::seq2seq::Model;
use crate::tensor::{io as tensor_io, RngState, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SVCK";

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Optimizer updates applied so far.
    pub step: u64,
    pub model: Model,
    pub opt: OptState,
    pub rng: RngState,
    pub history: Vec<LossRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    config: TrainConfig,
    rng: RngState,
    tensors: Vec<String>,
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut records: Vec<(String, Tensor)> = Vec::new();
    for (n, t) in ck.model.tensors() {
        records.push((format!("model/{n}"), t.clone()));
    }
    for (n, t) in &ck.opt.velocity {
        records.push((format!("opt/{n}"), t.clone()));
    }
    let hist: Vec<f64> = ck.history.iter().flat_map(|r| [r.step as f64, r.recon, r.future, r.total]).collect();
    records.push(("history".into(), Tensor::new(vec![ck.history.len(), 4], hist)?));

    let header = Header {
        version: CHECKPOINT_VERSION,
        step: ck.step,
        config: ck.config.clone(),
        rng: ck.rng.clone(),
        tensors: records.iter().map(|(n, _)| n.clone()).collect(),
    };
    let json = serde_json::to_vec_pretty(&header)?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in &records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        tensor_io::write_tensor(&mut out, t)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        bail!(Format, "checkpoint truncated in {what}");
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4, what)?.try_into().unwrap()))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        bail!(Format, "not an SVCK checkpoint");
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        bail!(Format, "checkpoint version {version}, expected {CHECKPOINT_VERSION}");
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        bail!(Format, "checkpoint checksum mismatch");
    }

    let mut rest = &body[8..];
    let header_len = u64::from_le_bytes(take(&mut rest, 8, "header length")?.try_into().unwrap());
    let header: Header = serde_json::from_slice(take(&mut rest, header_len as usize, "header")?)
        .map_err(|e| crate::error::Error::Format(format!("checkpoint header: {e}")))?;
    if header.version != version {
        bail!(Format, "header version {} disagrees with container version {version}", header.version);
    }
    let count = take_u32(&mut rest, "record count")? as usize;
    if count != header.tensors.len() {
        bail!(Format, "header lists {} tensors, container has {count}", header.tensors.len());
    }
    let mut records = Vec::with_capacity(count);
    for expected in &header.tensors {
        let len = take_u32(&mut rest, "record name")? as usize;
        let name = std::str::from_utf8(take(&mut rest, len, "record name")?)
            .map_err(|_| crate::error::Error::Format("record name is not UTF-8".into()))?;
        if name != expected {
            bail!(Format, "record {name} out of order, expected {expected}");
        }
        records.push((name.to_string(), tensor_io::read_tensor(&mut rest)?));
    }
    if !rest.is_empty() {
        bail!(Format, "{} unexpected bytes after the last record", rest.len());
    }

    header.config.model.validate()?;
    let mut model = Model::zeros(&header.config.model);
    let mut opt = OptState::new(&model);
    let mut it = records.into_iter();
    for (name, dst) in model.tensors_mut() {
        fill_record(&mut it, &format!("model/{name}"), dst)?;
    }
    for (name, dst) in &mut opt.velocity {
        fill_record(&mut it, &format!("opt/{name}"), dst)?;
    }
    let (hname, hist) = it.next().ok_or_else(|| crate::error::Error::Format("missing history record".into()))?;
    if hname != "history" || hist.ndim() != 2 || hist.shape()[1] != 4 {
        bail!(Format, "malformed history record {hname} {:?}", hist.shape());
    }
    if let Some((extra, _)) = it.next() {
        bail!(Format, "unexpected record {extra}");
    }
    let history = hist
        .data()
        .chunks_exact(4)
        .map(|r| LossRecord { step: r[0] as u64, recon: r[1], future: r[2], total: r[3] })
        .collect();
    opt.step = header.step;
    Ok(Checkpoint { config: header.config, step: header.step, model, opt, rng: header.rng, history })
}

fn fill_record(it: &mut impl Iterator<Item = (String, Tensor)>, name: &str, dst: &mut Tensor) -> Result<()> {
    let Some((got, t)) = it.next() else {
        bail!(Format, "missing record {name}");
    };
    if got != name {
        bail!(Format, "expected record {name}, found {got}");
    }
    if t.shape() != dst.shape() {
        bail!(Format, "record {name} has shape {:?}, config implies {:?}", t.shape(), dst.shape());
    }
    *dst = t;
    Ok(())
}

/// Writes through a temporary file and renames, so an existing checkpoint
/// at `path` is never left half-written.
pub fn checkpoint_save(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_to_bytes(ck)?;
    let tmp = path.with_extension("svck.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    checkpoint_from_bytes(&fs::read(path)?)
}
