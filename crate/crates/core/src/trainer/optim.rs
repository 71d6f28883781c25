use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::params::ParamSet;
use crate::tensor::{kernels, Tensor};

/// Hyperparameters of one momentum-SGD update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global L2 norm above which gradients are rescaled; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bail!(Parameter, "learning rate must be positive, got {}", self.learning_rate);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!(Parameter, "momentum must lie in [0, 1), got {}", self.momentum);
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                bail!(Parameter, "clip norm must be positive, got {c}");
            }
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter tensor, plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub velocity: Vec<(String, Tensor)>,
    pub step: u64,
}

impl OptState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let velocity = params
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, Tensor::zeros(t.shape())))
            .collect();
        Self { velocity, step: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// `v ← μ·v − lr·g`, `p ← p + v`, after rescaling `g` to the clip norm when
/// its global norm exceeds it.
pub fn sgd_momentum_step<P: ParamSet>(params: &mut P, grads: &P, opt: &mut OptState, cfg: &SgdConfig) -> Result<StepStats> {
    let grads = grads.tensors();
    let mut sq = 0.0;
    for (name, g) in &grads {
        if !g.is_finite() {
            bail!(Training, "non-finite gradient in tensor {name}");
        }
        sq += kernels::sum_sq(g.data());
    }
    let grad_norm = sq.sqrt();
    let (scale, clipped) = match cfg.grad_clip_norm {
        Some(c) if grad_norm > c => (c / grad_norm, true),
        _ => (1.0, false),
    };

    let params = params.tensors_mut();
    if params.len() != grads.len() || params.len() != opt.velocity.len() {
        bail!(Dimension, "optimizer state does not mirror the parameter set");
    }
    for (((name, p), (_, g)), (_, v)) in params.into_iter().zip(&grads).zip(&mut opt.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            bail!(Dimension, "shape mismatch in optimizer update of {name}");
        }
        let step = -cfg.learning_rate * scale;
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = cfg.momentum * *vv + step * gv;
            *pv += *vv;
        }
        if !p.is_finite() {
            bail!(Training, "update made tensor {name} non-finite");
        }
    }
    opt.step += 1;
    Ok(StepStats { grad_norm, clipped })
}
