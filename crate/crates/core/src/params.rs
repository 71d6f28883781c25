//! Uniform access to the trainable tensors of a model.

use crate::error::{bail, Result};
use crate::tensor::{kernels, Tensor};

/// Anything that owns a fixed, ordered list of named parameter tensors.
///
/// The order returned by [`ParamSet::tensors`] and [`ParamSet::tensors_mut`]
/// must agree; the optimizer and checkpoint code pair tensors by position.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// L2 norm over every entry of every tensor.
    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| kernels::sum_sq(t.data()))
            .sum::<f64>()
            .sqrt()
    }
}

/// `dst += src`, tensor by tensor.
pub fn accumulate<P: ParamSet>(dst: &mut P, src: &P) -> Result<()> {
    let src = src.tensors();
    let dst = dst.tensors_mut();
    if src.len() != dst.len() {
        bail!(Dimension, "parameter sets differ in tensor count");
    }
    for ((_, d), (_, s)) in dst.into_iter().zip(src) {
        d.add_scaled(1.0, s)?;
    }
    Ok(())
}

pub(crate) fn prefixed<'a>(
    prefix: &str,
    items: Vec<(String, &'a Tensor)>,
) -> impl Iterator<Item = (String, &'a Tensor)> + use<'a> {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Tensor)>,
) -> impl Iterator<Item = (String, &'a mut Tensor)> + use<'a> {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}
