//! Output units and their losses.
//!
//! Every loss sums over all entries. `per_frame` splits the total along the
//! leading axis (time for frame sequences, rows for classifier logits), and
//! `grad` is the gradient with respect to the pre-activation.

use crate::error::{bail, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_frame: Tensor,
    pub grad: Tensor,
}

impl LossReport {
    /// Multiplies the loss and its gradient by `s` (used for batch averaging).
    pub fn scaled(mut self, s: f64) -> Self {
        self.total *= s;
        self.per_frame.scale(s);
        self.grad.scale(s);
        self
    }

    fn from_elementwise(shape: &[usize], losses: Vec<f64>, grad: Vec<f64>) -> Self {
        let lead = shape.first().copied().unwrap_or(1);
        let per_frame: Vec<f64> = if lead == 0 {
            Vec::new()
        } else {
            losses.chunks(losses.len() / lead).map(|c| c.iter().sum()).collect()
        };
        Self {
            total: per_frame.iter().sum(),
            per_frame: Tensor::from_parts(vec![per_frame.len()], per_frame),
            grad: Tensor::from_parts(shape.to_vec(), grad),
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(Dimension, "{what}: shapes {:?} and {:?} differ", a.shape(), b.shape());
    }
    Ok(())
}

/// Cross-entropy of logistic outputs against targets in `[0, 1]`.
///
/// Evaluated as `max(z,0) - z·t + ln(1 + e^{-|z|})`, which never overflows.
pub fn logistic_xent(logits: &Tensor, targets: &Tensor) -> Result<LossReport> {
    same_shape(logits, targets, "logistic_xent")?;
    if let Some(t) = targets.data().iter().find(|t| !(0.0..=1.0).contains(*t)) {
        bail!(Data, "cross-entropy target {t} outside [0, 1]");
    }
    let (loss, grad): (Vec<f64>, Vec<f64>) = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| {
            let e = (-z.abs()).exp();
            let y = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            (z.max(0.0) - z * t + e.ln_1p(), y - t)
        })
        .unzip();
    Ok(LossReport::from_elementwise(logits.shape(), loss, grad))
}

/// `Σ (p - t)²` with gradient `2(p - t)`; there is no ½ factor.
pub fn squared_loss(preds: &Tensor, targets: &Tensor) -> Result<LossReport> {
    same_shape(preds, targets, "squared_loss")?;
    let (loss, grad): (Vec<f64>, Vec<f64>) = preds
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| {
            let d = p - t;
            (d * d, 2.0 * d)
        })
        .unzip();
    Ok(LossReport::from_elementwise(preds.shape(), loss, grad))
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Softmax cross-entropy for `[batch × K]` logits and integer labels.
/// `per_frame` holds one loss per row.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<LossReport> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        bail!(
            Dimension,
            "softmax_xent: logits {:?} for {} labels",
            logits.shape(),
            labels.len()
        );
    }
    let k = logits.shape()[1];
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        bail!(Data, "label {l} outside 0..{k}");
    }
    let mut losses = vec![0.0; logits.len()];
    let mut grad = softmax_rows(logits.data(), k);
    for (r, (row, &label)) in logits.data().chunks(k).zip(labels).enumerate() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        losses[r * k] = lse - row[label];
        grad[r * k + label] -= 1.0;
    }
    Ok(LossReport::from_elementwise(logits.shape(), losses, grad))
}
