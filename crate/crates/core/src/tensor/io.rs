//! `SVT1` binary tensor container.
//!
//! Layout: magic `SVT1`, `u32` ndim, `ndim × u64` extents, then the values as
//! little-endian `f64`. All integers are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{bail, Error, Result};

pub const MAGIC: &[u8; 4] = b"SVT1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.ndim() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        bail!(Format, "bad tensor magic {:?}", magic);
    }
    let mut u32b = [0u8; 4];
    read_exact(r, &mut u32b)?;
    let ndim = u32::from_le_bytes(u32b) as usize;
    if ndim > 16 {
        bail!(Format, "implausible tensor rank {ndim}");
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut u64b = [0u8; 8];
    for _ in 0..ndim {
        read_exact(r, &mut u64b)?;
        shape.push(u64::from_le_bytes(u64b) as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| *n <= (1 << 34))
        .ok_or_else(|| Error::Format(format!("tensor extents {shape:?} overflow")))?;
    let mut raw = vec![0u8; n * 8];
    read_exact(r, &mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 + 8 * t.ndim() + 8 * t.len());
    write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<Tensor> {
    let t = read_tensor(&mut bytes)?;
    if !bytes.is_empty() {
        bail!(Format, "{} trailing bytes after tensor", bytes.len());
    }
    Ok(t)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, to_bytes(t))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    from_bytes(&fs::read(path)?)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated tensor record".into()),
        _ => Error::Io(e),
    })
}
