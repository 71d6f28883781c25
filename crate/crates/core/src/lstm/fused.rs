//! Gate-fused weight layouts used by the sequence code.
//!
//! The four gates are laid side by side in `i, f, c, o` order, so one
//! `[batch × fan_in] · [fan_in × 4H]` product yields every pre-activation.

use super::{LstmParams, LstmState, StepCache};
use crate::tensor::{kernels, sigmoid, Tensor};

pub(crate) struct PreparedLstm<'a> {
    params: &'a LstmParams,
    input: usize,
    hidden: usize,
    /// `[input × 4H]`
    wx_t: Vec<f64>,
    /// `[hidden × 4H]`
    wh_t: Vec<f64>,
    bias: Vec<f64>,
}

fn fuse_transposed(mats: [&Tensor; 4], fan_in: usize, hidden: usize) -> Vec<f64> {
    let width = 4 * hidden;
    let mut out = vec![0.0; fan_in * width];
    for (g, m) in mats.iter().enumerate() {
        kernels::transpose_strided(m.data(), fan_in, hidden, fan_in, &mut out[g * hidden..], width);
    }
    out
}

impl<'a> PreparedLstm<'a> {
    pub fn new(params: &'a LstmParams) -> Self {
        let (input, hidden) = (params.input_dim(), params.hidden_dim());
        Self {
            params,
            input,
            hidden,
            wx_t: fuse_transposed(params.input_weights(), input, hidden),
            wh_t: fuse_transposed(params.recurrent_weights(), hidden, hidden),
            bias: params.biases().iter().flat_map(|b| b.data().iter().copied()).collect(),
        }
    }

    /// One step for the whole batch. `x = None` means a zero input.
    pub fn step(&self, x: Option<&[f64]>, prev: &LstmState) -> (LstmState, StepCache) {
        let batch = prev.batch();
        let hid = self.hidden;
        let width = 4 * hid;
        let mut z = Vec::with_capacity(batch * width);
        for _ in 0..batch {
            z.extend_from_slice(&self.bias);
        }
        if let Some(x) = x {
            debug_assert_eq!(x.len(), batch * self.input);
            kernels::matmul_acc(x, &self.wx_t, &mut z, batch, self.input, width);
        }
        kernels::matmul_acc(prev.h.data(), &self.wh_t, &mut z, batch, hid, width);

        let p = self.params;
        let (w_ci, w_cf, w_co) = (p.w_ci.data(), p.w_cf.data(), p.w_co.data());
        let n = batch * hid;
        let (mut i, mut f, mut g, mut c, mut o, mut h) = (
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
        );
        let c_prev = prev.c.data();
        for b in 0..batch {
            let zr = &z[b * width..(b + 1) * width];
            for j in 0..hid {
                let k = b * hid + j;
                let cp = c_prev[k];
                let ig = sigmoid(zr[j] + w_ci[j] * cp);
                let fg = sigmoid(zr[hid + j] + w_cf[j] * cp);
                let gg = zr[2 * hid + j].tanh();
                let cc = fg * cp + ig * gg;
                let og = sigmoid(zr[3 * hid + j] + w_co[j] * cc);
                i[k] = ig;
                f[k] = fg;
                g[k] = gg;
                c[k] = cc;
                o[k] = og;
                h[k] = og * cc.tanh();
            }
        }
        let shape = vec![batch, hid];
        let t = |v: Vec<f64>| Tensor::from_parts(shape.clone(), v);
        let cache = StepCache {
            x: x.map(|x| Tensor::from_parts(vec![batch, self.input], x.to_vec())),
            h_prev: prev.h.clone(),
            c_prev: prev.c.clone(),
            i: t(i),
            f: t(f),
            g: t(g),
            c: t(c.clone()),
            o: t(o),
        };
        (LstmState { h: t(h), c: t(c) }, cache)
    }
}

/// Gradient accumulator in the fused, transposed layout.
pub(crate) struct LstmGradAccum {
    input: usize,
    hidden: usize,
    gx_t: Vec<f64>,
    /// False until a step with a non-zero input arrives; `gx_t` is then all zero.
    saw_input: bool,
    gh_t: Vec<f64>,
    /// `w_ci, w_cf, w_co` back to back.
    peep: Vec<f64>,
    bias: Vec<f64>,
}

impl LstmGradAccum {
    pub fn new(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            gx_t: vec![0.0; input * 4 * hidden],
            saw_input: false,
            gh_t: vec![0.0; hidden * 4 * hidden],
            peep: vec![0.0; 3 * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Converts back to the per-gate `[hidden × fan_in]` layout.
    pub fn finish(&self) -> LstmParams {
        let (d, h) = (self.input, self.hidden);
        let width = 4 * h;
        let unfuse = |src: &[f64], fan_in: usize, g: usize| {
            let mut out = vec![0.0; h * fan_in];
            kernels::transpose_strided(&src[g * h..], width, fan_in, h, &mut out, fan_in);
            Tensor::from_parts(vec![h, fan_in], out)
        };
        let vec_of = |src: &[f64], g: usize| Tensor::from_parts(vec![h], src[g * h..(g + 1) * h].to_vec());
        let input_grad = |g: usize| {
            if self.saw_input {
                unfuse(&self.gx_t, d, g)
            } else {
                Tensor::zeros(&[h, d])
            }
        };
        LstmParams {
            w_xi: input_grad(0),
            w_xf: input_grad(1),
            w_xc: input_grad(2),
            w_xo: input_grad(3),
            w_hi: unfuse(&self.gh_t, h, 0),
            w_hf: unfuse(&self.gh_t, h, 1),
            w_hc: unfuse(&self.gh_t, h, 2),
            w_ho: unfuse(&self.gh_t, h, 3),
            w_ci: vec_of(&self.peep, 0),
            w_cf: vec_of(&self.peep, 1),
            w_co: vec_of(&self.peep, 2),
            b_i: vec_of(&self.bias, 0),
            b_f: vec_of(&self.bias, 1),
            b_c: vec_of(&self.bias, 2),
            b_o: vec_of(&self.bias, 3),
        }
    }
}

pub(crate) struct BackwardOut {
    pub dx: Option<Vec<f64>>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Weights stacked gate-major (`[4H × fan_in]`) for propagating gradients
/// back to the layer inputs.
pub(crate) struct LstmAdjoint<'a> {
    params: &'a LstmParams,
    input: usize,
    hidden: usize,
    wx: Option<Vec<f64>>,
    wh: Vec<f64>,
}

impl<'a> LstmAdjoint<'a> {
    pub fn new(params: &'a LstmParams, with_input_grad: bool) -> Self {
        let stack = |m: [&Tensor; 4]| m.iter().flat_map(|t| t.data().iter().copied()).collect();
        Self {
            params,
            input: params.input_dim(),
            hidden: params.hidden_dim(),
            wx: with_input_grad.then(|| stack(params.input_weights())),
            wh: stack(params.recurrent_weights()),
        }
    }

    pub fn backward_step(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc_in: &[f64],
        acc: &mut LstmGradAccum,
        want_dx: bool,
    ) -> BackwardOut {
        let hid = self.hidden;
        let width = 4 * hid;
        let batch = cache.h_prev.shape()[0];
        let p = self.params;
        let (w_ci, w_cf, w_co) = (p.w_ci.data(), p.w_cf.data(), p.w_co.data());
        let (ci, cf, cg, cc, co, cp) = (
            cache.i.data(),
            cache.f.data(),
            cache.g.data(),
            cache.c.data(),
            cache.o.data(),
            cache.c_prev.data(),
        );
        let mut dz = vec![0.0; batch * width];
        let mut dc_prev = vec![0.0; batch * hid];
        for b in 0..batch {
            let dzr = &mut dz[b * width..(b + 1) * width];
            for j in 0..hid {
                let k = b * hid + j;
                let (i, f, g, c, o, c0) = (ci[k], cf[k], cg[k], cc[k], co[k], cp[k]);
                let tc = c.tanh();
                let dzo = dh[k] * tc * o * (1.0 - o);
                let dc = dc_in[k] + dh[k] * o * (1.0 - tc * tc) + dzo * w_co[j];
                let dzi = dc * g * i * (1.0 - i);
                let dzf = dc * c0 * f * (1.0 - f);
                let dzg = dc * i * (1.0 - g * g);
                dc_prev[k] = dc * f + dzi * w_ci[j] + dzf * w_cf[j];
                acc.peep[j] += dzi * c0;
                acc.peep[hid + j] += dzf * c0;
                acc.peep[2 * hid + j] += dzo * c;
                dzr[j] = dzi;
                dzr[hid + j] = dzf;
                dzr[2 * hid + j] = dzg;
                dzr[3 * hid + j] = dzo;
            }
            for (a, v) in acc.bias.iter_mut().zip(dzr.iter()) {
                *a += v;
            }
        }
        if let Some(x) = &cache.x {
            acc.saw_input = true;
            kernels::matmul_tn_acc(x.data(), &dz, &mut acc.gx_t, batch, self.input, width);
        }
        kernels::matmul_tn_acc(cache.h_prev.data(), &dz, &mut acc.gh_t, batch, hid, width);

        let mut dh_prev = vec![0.0; batch * hid];
        kernels::matmul_acc(&dz, &self.wh, &mut dh_prev, batch, width, hid);
        let dx = if want_dx {
            let wx = self
                .wx
                .as_ref()
                .expect("input gradient requested from an adjoint built without it");
            let mut dx = vec![0.0; batch * self.input];
            kernels::matmul_acc(&dz, wx, &mut dx, batch, width, self.input);
            Some(dx)
        } else {
            None
        };
        BackwardOut { dx, dh_prev, dc_prev }
    }
}
