use crate::error::{bail, Result};
use crate::params::ParamSet;
use crate::seq2seq::{backward, composite_forward, ForwardTrace, Mode, Model};
use crate::tensor::RngState;

use super::reference::{reference_loss, DoubleDouble, Real, RefParams};
use crate::seq2seq::Batch;

/// Largest model the checker will perturb.
pub const GRAD_CHECK_MAX_PARAMS: usize = 100_000;

/// Absolute floor on the denominator of the relative error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per tensor; `None` checks every coordinate.
    pub sample: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-6, sample: Some(16), seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub per_tensor: Vec<TensorCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares the analytic gradient from [`backward`] against central
/// differences of the training-mode loss on `batch`.
pub fn grad_check(model: &Model, batch: &Batch, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    grad_check_with(model, batch, opts, backward)
}

/// As [`grad_check`] with a caller-supplied gradient routine.
pub fn grad_check_with<F>(model: &Model, batch: &Batch, opts: &GradCheckOptions, gradient: F) -> Result<GradCheckReport>
where
    F: Fn(&Model, &ForwardTrace) -> Result<Model>,
{
    let n = model.num_params();
    if n > GRAD_CHECK_MAX_PARAMS {
        bail!(Usage, "grad_check needs at most {GRAD_CHECK_MAX_PARAMS} parameters, model has {n}");
    }
    if !(opts.eps > 0.0 && opts.eps.is_finite()) {
        bail!(Usage, "grad_check eps must be positive, got {}", opts.eps);
    }
    let trace = composite_forward(model, &batch.input, batch.future.as_ref(), Mode::Train)?;
    let grads = gradient(model, &trace)?;
    let grad_tensors = grads.tensors();
    let mut rng = RngState::new(opts.seed);
    let eps = DoubleDouble::from_f64(opts.eps);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tensor: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        per_tensor: Vec::new(),
    };
    for (ti, (name, param)) in model.tensors().into_iter().enumerate() {
        let coords = sample_coords(param.len(), opts.sample, &mut rng);
        let mut worst = 0.0f64;
        for &k in &coords {
            let loss = |delta: DoubleDouble| {
                let p = RefParams::new(model, Some((ti, k, delta)));
                reference_loss(model, &p, &batch.input, batch.future.as_ref())
            };
            let numeric = ((loss(eps) - loss(-eps)) / (eps + eps)).to_f64();
            let analytic = grad_tensors[ti].1.data()[k];
            let err = relative_error(analytic, numeric);
            worst = worst.max(err);
            if err > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = err;
                report.tensor = name.clone();
                report.index = k;
                report.analytic = analytic;
                report.numeric = numeric;
            }
            report.checked += 1;
        }
        report.per_tensor.push(TensorCheck { name, checked: coords.len(), max_rel_error: worst });
    }
    Ok(report)
}

fn sample_coords(len: usize, sample: Option<usize>, rng: &mut RngState) -> Vec<usize> {
    match sample {
        Some(s) if s < len => {
            // partial Fisher-Yates
            let mut idx: Vec<usize> = (0..len).collect();
            for i in 0..s {
                let j = i + rng.below(len - i);
                idx.swap(i, j);
            }
            idx.truncate(s);
            idx
        }
        _ => (0..len).collect(),
    }
}
