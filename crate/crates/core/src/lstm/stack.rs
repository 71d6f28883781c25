//! Multi-layer unrolling: layer `l > 0` reads the `h` of layer `l - 1` at the
//! same time step.

use super::{LstmAdjoint, LstmGradAccum, LstmParams, LstmState, PreparedLstm, StepCache};

/// Per-layer `(∂L/∂h, ∂L/∂c)` flowing backwards in time.
pub(crate) type Carry = Vec<(Vec<f64>, Vec<f64>)>;

pub(crate) struct StackForward<'a> {
    layers: Vec<PreparedLstm<'a>>,
}

impl<'a> StackForward<'a> {
    pub fn new(params: &'a [LstmParams]) -> Self {
        Self {
            layers: params.iter().map(PreparedLstm::new).collect(),
        }
    }

    /// Advances every layer by one step. `masks[l]`, when given, multiplies the
    /// input of layer `l` elementwise.
    pub fn step(
        &self,
        x: Option<&[f64]>,
        states: &[LstmState],
        masks: Option<&[Vec<f64>]>,
    ) -> (Vec<LstmState>, Vec<StepCache>) {
        let mut next = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let below = if l == 0 {
                x.map(|v| v.to_vec())
            } else {
                Some(next.last().map(|s: &LstmState| s.h.data().to_vec()).unwrap())
            };
            let input = match (below, masks) {
                (Some(mut v), Some(m)) => {
                    v.iter_mut().zip(&m[l]).for_each(|(a, b)| *a *= b);
                    Some(v)
                }
                (v, _) => v,
            };
            let (s, c) = layer.step(input.as_deref(), &states[l]);
            next.push(s);
            caches.push(c);
        }
        (next, caches)
    }
}

pub(crate) struct StackBackward<'a> {
    layers: Vec<LstmAdjoint<'a>>,
    accs: Vec<LstmGradAccum>,
    carry: Carry,
}

impl<'a> StackBackward<'a> {
    pub fn new(params: &'a [LstmParams], batch: usize) -> Self {
        Self {
            layers: params
                .iter()
                .enumerate()
                .map(|(l, p)| LstmAdjoint::new(p, l > 0))
                .collect(),
            accs: params
                .iter()
                .map(|p| LstmGradAccum::new(p.input_dim(), p.hidden_dim()))
                .collect(),
            carry: params
                .iter()
                .map(|p| {
                    let n = batch * p.hidden_dim();
                    (vec![0.0; n], vec![0.0; n])
                })
                .collect(),
        }
    }

    /// Back-propagates one time step. `dh_top` is the gradient arriving at the
    /// top layer's `h` from outside the recurrence (e.g. a readout).
    pub fn step(&mut self, caches: &[StepCache], dh_top: Option<&[f64]>, masks: Option<&[Vec<f64>]>) {
        let top = self.layers.len() - 1;
        let mut from_above: Option<Vec<f64>> = None;
        for l in (0..=top).rev() {
            let (mut dh, dc) = std::mem::take(&mut self.carry[l]);
            let extra = if l == top { dh_top.map(<[f64]>::to_vec) } else { from_above.take() };
            if let Some(e) = extra {
                dh.iter_mut().zip(&e).for_each(|(a, b)| *a += b);
            }
            let out = self.layers[l].backward_step(&caches[l], &dh, &dc, &mut self.accs[l], l > 0);
            self.carry[l] = (out.dh_prev, out.dc_prev);
            from_above = out.dx.map(|mut d| {
                if let Some(m) = masks {
                    d.iter_mut().zip(&m[l]).for_each(|(a, b)| *a *= b);
                }
                d
            });
        }
    }

    pub fn add_to_carry(&mut self, other: &Carry) {
        for ((dh, dc), (oh, oc)) in self.carry.iter_mut().zip(other) {
            dh.iter_mut().zip(oh).for_each(|(a, b)| *a += b);
            dc.iter_mut().zip(oc).for_each(|(a, b)| *a += b);
        }
    }

    pub fn finish(self) -> (Vec<LstmParams>, Carry) {
        (self.accs.iter().map(LstmGradAccum::finish).collect(), self.carry)
    }
}
