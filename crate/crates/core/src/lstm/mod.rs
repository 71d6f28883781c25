//! A single LSTM layer with diagonal peephole connections.
//!
//! Per step, with `⊙` the elementwise product:
//!
//! ```text
//! i = σ(W_xi x + W_hi h₋ + w_ci ⊙ c₋ + b_i)
//! f = σ(W_xf x + W_hf h₋ + w_cf ⊙ c₋ + b_f)
//! c = f ⊙ c₋ + i ⊙ tanh(W_xc x + W_hc h₋ + b_c)
//! o = σ(W_xo x + W_ho h₋ + w_co ⊙ c + b_o)
//! h = o ⊙ tanh(c)
//! ```
//!
//! The output gate looks at the freshly updated cell `c`, not `c₋`.

mod fused;
pub(crate) mod stack;

pub(crate) use fused::{LstmAdjoint, LstmGradAccum, PreparedLstm};

use crate::error::{bail, Result};
use crate::params::ParamSet;
use crate::tensor::{uniform_init, RngState, Tensor};

/// Weights of one layer. Dense matrices are `[hidden × fan_in]`; peepholes and
/// biases are `[hidden]` vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_xi: Tensor,
    pub w_xf: Tensor,
    pub w_xc: Tensor,
    pub w_xo: Tensor,
    pub w_hi: Tensor,
    pub w_hf: Tensor,
    pub w_hc: Tensor,
    pub w_ho: Tensor,
    pub w_ci: Tensor,
    pub w_cf: Tensor,
    pub w_co: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

impl LstmParams {
    /// Dense matrices drawn from `U[±1/sqrt(fan_in)]`; peepholes and biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut RngState) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            bail!(
                Parameter,
                "LSTM dimensions must be positive (input {input_dim}, hidden {hidden_dim})"
            );
        }
        let (h, d) = (hidden_dim, input_dim);
        let mut x = || uniform_init(&[h, d], d, rng);
        let (w_xi, w_xf, w_xc, w_xo) = (x()?, x()?, x()?, x()?);
        let mut r = || uniform_init(&[h, h], h, rng);
        let (w_hi, w_hf, w_hc, w_ho) = (r()?, r()?, r()?, r()?);
        let zero = Tensor::zeros(&[h]);
        Ok(Self {
            w_xi,
            w_xf,
            w_xc,
            w_xo,
            w_hi,
            w_hf,
            w_hc,
            w_ho,
            w_ci: zero.clone(),
            w_cf: zero.clone(),
            w_co: zero.clone(),
            b_i: zero.clone(),
            b_f: zero.clone(),
            b_c: zero.clone(),
            b_o: zero,
        })
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let (h, d) = (hidden_dim, input_dim);
        let wx = Tensor::zeros(&[h, d]);
        let wh = Tensor::zeros(&[h, h]);
        let v = Tensor::zeros(&[h]);
        Self {
            w_xi: wx.clone(),
            w_xf: wx.clone(),
            w_xc: wx.clone(),
            w_xo: wx,
            w_hi: wh.clone(),
            w_hf: wh.clone(),
            w_hc: wh.clone(),
            w_ho: wh,
            w_ci: v.clone(),
            w_cf: v.clone(),
            w_co: v.clone(),
            b_i: v.clone(),
            b_f: v.clone(),
            b_c: v.clone(),
            b_o: v,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xi.shape()[0]
    }

    /// `4(HD + H² + H) + 3H`.
    pub fn count(input_dim: usize, hidden_dim: usize) -> usize {
        let (h, d) = (hidden_dim, input_dim);
        4 * (h * d + h * h + h) + 3 * h
    }

    pub(crate) fn input_weights(&self) -> [&Tensor; 4] {
        [&self.w_xi, &self.w_xf, &self.w_xc, &self.w_xo]
    }

    pub(crate) fn recurrent_weights(&self) -> [&Tensor; 4] {
        [&self.w_hi, &self.w_hf, &self.w_hc, &self.w_ho]
    }

    pub(crate) fn biases(&self) -> [&Tensor; 4] {
        [&self.b_i, &self.b_f, &self.b_c, &self.b_o]
    }
}

impl ParamSet for LstmParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_xi".into(), &self.w_xi),
            ("w_xf".into(), &self.w_xf),
            ("w_xc".into(), &self.w_xc),
            ("w_xo".into(), &self.w_xo),
            ("w_hi".into(), &self.w_hi),
            ("w_hf".into(), &self.w_hf),
            ("w_hc".into(), &self.w_hc),
            ("w_ho".into(), &self.w_ho),
            ("w_ci".into(), &self.w_ci),
            ("w_cf".into(), &self.w_cf),
            ("w_co".into(), &self.w_co),
            ("b_i".into(), &self.b_i),
            ("b_f".into(), &self.b_f),
            ("b_c".into(), &self.b_c),
            ("b_o".into(), &self.b_o),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_xi".into(), &mut self.w_xi),
            ("w_xf".into(), &mut self.w_xf),
            ("w_xc".into(), &mut self.w_xc),
            ("w_xo".into(), &mut self.w_xo),
            ("w_hi".into(), &mut self.w_hi),
            ("w_hf".into(), &mut self.w_hf),
            ("w_hc".into(), &mut self.w_hc),
            ("w_ho".into(), &mut self.w_ho),
            ("w_ci".into(), &mut self.w_ci),
            ("w_cf".into(), &mut self.w_cf),
            ("w_co".into(), &mut self.w_co),
            ("b_i".into(), &mut self.b_i),
            ("b_f".into(), &mut self.b_f),
            ("b_c".into(), &mut self.b_c),
            ("b_o".into(), &mut self.b_o),
        ]
    }
}

/// Output `h` and cell `c` of a layer, both `[batch × hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.h.shape()[1]
    }
}

/// Activations of one forward step kept for the backward pass.
///
/// `x` is `None` when the step had no input (treated as a zero vector).
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: Option<Tensor>,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    pub i: Tensor,
    pub f: Tensor,
    /// `tanh` of the cell input.
    pub g: Tensor,
    pub c: Tensor,
    pub o: Tensor,
}

impl StepCache {
    pub fn h(&self) -> Tensor {
        let data = self
            .o
            .data()
            .iter()
            .zip(self.c.data())
            .map(|(o, c)| o * c.tanh())
            .collect();
        Tensor::from_parts(self.o.shape().to_vec(), data)
    }
}

/// Gradients produced by [`lstm_step_backward`].
#[derive(Clone, Debug)]
pub struct StepGrads {
    pub grad_x: Tensor,
    pub grad_h_prev: Tensor,
    pub grad_c_prev: Tensor,
    pub params: LstmParams,
}

fn check_state(p: &LstmParams, s: &LstmState, what: &str) -> Result<()> {
    let want = [s.batch(), p.hidden_dim()];
    if s.h.shape() != want || s.c.shape() != want {
        bail!(
            Dimension,
            "{what}: state shapes {:?}/{:?} do not match hidden {}",
            s.h.shape(),
            s.c.shape(),
            p.hidden_dim()
        );
    }
    Ok(())
}

/// One forward step for a `[batch × input]` input.
pub fn lstm_step_forward(
    p: &LstmParams,
    x: &Tensor,
    prev: &LstmState,
) -> Result<(LstmState, StepCache)> {
    if prev.h.ndim() != 2 {
        bail!(Dimension, "state must be [batch × hidden]");
    }
    check_state(p, prev, "lstm_step_forward")?;
    if x.shape() != [prev.batch(), p.input_dim()] {
        bail!(
            Dimension,
            "input shape {:?}, expected [{}, {}]",
            x.shape(),
            prev.batch(),
            p.input_dim()
        );
    }
    Ok(PreparedLstm::new(p).step(Some(x.data()), prev))
}

/// Exact adjoint of [`lstm_step_forward`].
///
/// `grad_h` is `∂L/∂h_t`, `grad_c_in` the gradient reaching `c_t` from later
/// steps. The returned parameter gradient covers this step only.
pub fn lstm_step_backward(
    p: &LstmParams,
    cache: &StepCache,
    grad_h: &Tensor,
    grad_c_in: &Tensor,
) -> Result<StepGrads> {
    let batch = cache.h_prev.shape()[0];
    let want = [batch, p.hidden_dim()];
    if cache.c.shape() != want || grad_h.shape() != want || grad_c_in.shape() != want {
        bail!(
            Dimension,
            "backward: gradient shapes {:?}/{:?} do not match {:?}",
            grad_h.shape(),
            grad_c_in.shape(),
            want
        );
    }
    if let Some(x) = &cache.x {
        if x.shape() != [batch, p.input_dim()] {
            bail!(Dimension, "cached input has shape {:?}", x.shape());
        }
    }
    let adj = LstmAdjoint::new(p, true);
    let mut acc = LstmGradAccum::new(p.input_dim(), p.hidden_dim());
    let out = adj.backward_step(cache, grad_h.data(), grad_c_in.data(), &mut acc, true);
    let grad_x = out
        .dx
        .map(|d| Tensor::from_parts(vec![batch, p.input_dim()], d))
        .unwrap_or_else(|| Tensor::zeros(&[batch, p.input_dim()]));
    Ok(StepGrads {
        grad_x,
        grad_h_prev: Tensor::from_parts(want.to_vec(), out.dh_prev),
        grad_c_prev: Tensor::from_parts(want.to_vec(), out.dc_prev),
        params: acc.finish(),
    })
}

#[cfg(test)]
mod tests;
