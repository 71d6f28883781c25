use std::fs;
use std::path::Path;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Square grayscale digit images in `[0, 1]` with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitBank {
    images: Tensor,
    labels: Vec<u8>,
}

impl DigitBank {
    /// `images` is `[N × S × S]`; one label per image.
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 3 || shape[1] != shape[2] || shape[1] == 0 {
            bail!(Data, "digit images must be [N x S x S], got {shape:?}");
        }
        if shape[0] == 0 {
            bail!(Data, "digit bank is empty");
        }
        if shape[0] != labels.len() {
            bail!(Data, "{} images but {} labels", shape[0], labels.len());
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            bail!(Data, "digit pixel values must lie in [0, 1]");
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Side length of every image.
    pub fn size(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Box-filter downscale to side `size`, which must divide the current
    /// side. Returns a copy when the sizes already match.
    pub fn resized(&self, size: usize) -> Result<Self> {
        let s = self.size();
        if size == 0 || s % size != 0 {
            bail!(Usage, "cannot box-downscale {s}x{s} digits to {size}x{size}");
        }
        let f = s / size;
        if f == 1 {
            return Ok(self.clone());
        }
        let norm = 1.0 / (f * f) as f64;
        let mut data = Vec::with_capacity(self.len() * size * size);
        for i in 0..self.len() {
            let img = self.image(i);
            for r in 0..size {
                for c in 0..size {
                    let mut acc = 0.0;
                    for dr in 0..f {
                        let row = &img[(r * f + dr) * s + c * f..][..f];
                        acc += row.iter().sum::<f64>();
                    }
                    data.push(acc * norm);
                }
            }
        }
        let images = Tensor::new(vec![self.len(), size, size], data)?;
        Ok(Self { images, labels: self.labels.clone() })
    }
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    what: &'a str,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let Some((head, rest)) = self.bytes.split_first_chunk::<4>() else {
            bail!(Format, "{}: truncated header", self.what);
        };
        self.bytes = rest;
        Ok(u32::from_be_bytes(*head))
    }

    fn body(self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() != n {
            bail!(Format, "{}: expected {n} data bytes, found {}", self.what, self.bytes.len());
        }
        Ok(self.bytes)
    }
}

/// Reads an IDX image file (`0x803`, `[N × rows × cols]` bytes) and its label
/// file (`0x801`). Pixel bytes are scaled by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<DigitBank> {
    let read = |p: &Path| match fs::read(p) {
        Ok(b) => Ok(b),
        Err(e) => bail!(Format, "cannot read idx file {}: {e}", p.display()),
    };
    parse_idx(&read(images_path.as_ref())?, &read(labels_path.as_ref())?)
}

/// [`load_idx`] over in-memory file contents.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<DigitBank> {
    let mut ir = IdxReader { bytes: images, what: "idx images" };
    let magic = ir.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        bail!(Format, "idx images: bad magic {magic:#010x}");
    }
    let (n, rows, cols) = (ir.u32()? as usize, ir.u32()? as usize, ir.u32()? as usize);
    if rows != cols || rows == 0 {
        bail!(Format, "idx images: expected square images, got {rows}x{cols}");
    }
    let pixels = ir.body(n * rows * cols)?;

    let mut lr = IdxReader { bytes: labels, what: "idx labels" };
    let magic = lr.u32()?;
    if magic != IDX_LABELS_MAGIC {
        bail!(Format, "idx labels: bad magic {magic:#010x}");
    }
    let m = lr.u32()? as usize;
    if m != n {
        bail!(Format, "idx count mismatch: {n} images, {m} labels");
    }
    let label_bytes = lr.body(m)?;
    if n == 0 {
        bail!(Format, "idx files contain no images");
    }
    if let Some(bad) = label_bytes.iter().find(|&&l| l > 9) {
        bail!(Format, "idx labels: class {bad} outside 0..=9");
    }
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    DigitBank::new(Tensor::new(vec![n, rows, cols], data)?, label_bytes.to_vec())
}
