//! Dense row-major `f64` arrays and the small set of kernels the models need.
//!
//! Public operations validate shapes and refuse to hand back non-finite values.
//! The hot loops of the LSTM code go through [`kernels`] directly on slices.

pub mod io;
pub mod kernels;
mod rng;

pub use rng::RngState;

use crate::error::{bail, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the element count and that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            bail!(
                Dimension,
                "shape {:?} holds {} values, got {}",
                shape,
                n,
                data.len()
            );
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Row-major matrix from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            bail!(Dimension, "ragged rows");
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    /// Internal constructor for kernel outputs whose shape is known to match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            bail!(Dimension, "cannot reshape {:?} to {:?}", self.shape, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    /// Number of entries in one slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// The `i`-th slice along the leading axis, flattened.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Copies the `i`-th leading-axis slice out as its own tensor.
    pub fn slice_row(&self, i: usize) -> Tensor {
        Tensor::from_parts(self.shape[1..].to_vec(), self.row(i).to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let Some(first) = items.first() else {
            bail!(Dimension, "cannot stack zero tensors");
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                bail!(Dimension, "stack: {:?} vs {:?}", t.shape, first.shape);
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            bail!(Dimension, "add_scaled: {:?} vs {:?}", self.shape, other.shape);
        }
        kernels::axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn map(&self, f: ScalarFn) -> Tensor {
        map(self, f)
    }
}

/// Matrix product of `a[m×k]` and `b[k×n]`.
///
/// Each output entry sums its products in increasing `k`, starting from zero,
/// so the result matches a naive triple loop bit for bit.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 {
        bail!(Dimension, "matmul wants matrices, got {:?} and {:?}", a.shape, b.shape);
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        bail!(Dimension, "matmul inner dimensions {k} and {k2} differ");
    }
    let mut out = vec![0.0; m * n];
    kernels::matmul_acc(&a.data, &b.data, &mut out, m, k, n);
    let out = Tensor::from_parts(vec![m, n], out);
    if !out.is_finite() {
        return Err(Error::NonFinite("matmul"));
    }
    Ok(out)
}

/// Scalar functions available to [`map`].
///
/// The `*FromY` variants are derivatives expressed through the function's own
/// output: `y(1-y)` for the logistic and `1-y^2` for tanh.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarFn {
    Sigmoid,
    Tanh,
    DSigmoidFromY,
    DTanhFromY,
}

impl ScalarFn {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ScalarFn::Sigmoid => sigmoid(x),
            ScalarFn::Tanh => x.tanh(),
            ScalarFn::DSigmoidFromY => x * (1.0 - x),
            ScalarFn::DTanhFromY => 1.0 - x * x,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn map(a: &Tensor, f: ScalarFn) -> Tensor {
    Tensor::from_parts(a.shape.clone(), a.data.iter().map(|&x| f.apply(x)).collect())
}

/// Samples i.i.d. from `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Result<Tensor> {
    if fan_in == 0 {
        bail!(Parameter, "fan_in must be at least 1");
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    L2Norm,
    Max,
    Min,
    /// Population variance (divides by `n`).
    Variance,
}

/// Reduces every entry to a scalar, always in storage order.
pub fn reduce(a: &Tensor, kind: Reduction) -> Result<f64> {
    if a.is_empty() {
        bail!(Dimension, "cannot reduce an empty tensor");
    }
    let d = &a.data;
    let v = match kind {
        Reduction::Sum => d.iter().sum(),
        Reduction::L2Norm => d.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Reduction::Max => d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Reduction::Min => d.iter().copied().fold(f64::INFINITY, f64::min),
        Reduction::Variance => kernels::variance(d),
    };
    if !v.is_finite() {
        return Err(Error::NonFinite("reduce"));
    }
    Ok(v)
}
