//! Straight-line reference forward pass used as the numeric side of the
//! gradient checker.
//!
//! It shares no code with the production forward pass and is generic over
//! [`Real`], so it can run in double-double arithmetic. At `ε = 1e-6` the
//! `f64` loss difference `L(p+ε) - L(p-ε)` carries roundoff near `1e-10`,
//! which is larger than the signal for small gradients; with ~106-bit
//! arithmetic the central difference is limited by truncation alone.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::params::ParamSet;
use crate::seq2seq::{Model, OutputUnit};
use crate::tensor::Tensor;

pub(crate) trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn abs(self) -> Self {
        if self.to_f64() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    fn tanh(self) -> Self {
        let e = (Self::from_f64(-2.0) * self.abs()).exp();
        let t = (Self::one() - e) / (Self::one() + e);
        if self.to_f64() < 0.0 {
            -t
        } else {
            t
        }
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct DoubleDouble {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    const LN2: DoubleDouble = DoubleDouble {
        hi: 6.931_471_805_599_453e-1,
        lo: 2.319_046_813_846_299_6e-17,
    };

    fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p1, p2) = two_prod(self.hi, b);
        Self::new(p1, p2 + self.lo * b)
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        Self::new(s1, s2 + t2)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p1, p2) = two_prod(self.hi, b.hi);
        Self::new(p1, p2 + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        Self::new(q1, q2) + Self::from_f64(q3)
    }
}

impl Real for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi < -700.0 {
            return Self::zero();
        }
        assert!(self.hi < 700.0, "exp overflow in reference forward pass");
        // x = k ln2 + r, then exp(r) = (exp(r / 2^9))^(2^9)
        let k = (self.hi / Self::LN2.hi).round();
        let r = (self - Self::LN2.mul_f64(k)).mul_f64(1.0 / 512.0);
        // expm1(r) by Taylor series; |r| < 7e-4 so 14 terms is far past 2^-106
        let mut term = r;
        let mut sum = r;
        for n in 2..=14 {
            term = term * r / Self::from_f64(n as f64);
            sum = sum + term;
        }
        // expm1(2r) = 2 expm1(r) + expm1(r)^2
        for _ in 0..9 {
            sum = sum.mul_f64(2.0) + sum * sum;
        }
        (sum + Self::one()).mul_f64(2f64.powi(k as i32))
    }

    fn ln(self) -> Self {
        assert!(self.hi > 0.0, "log of non-positive value in reference forward pass");
        let mut y = Self::from_f64(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Self::one();
        }
        y
    }
}

/// Parameter tensors of a model converted to `R`, addressable by name.
pub(crate) struct RefParams<R> {
    tensors: HashMap<String, Vec<R>>,
}

impl<R: Real> RefParams<R> {
    /// Converts `model`, adding `delta` to entry `k` of the tensor at
    /// position `index` (in `ParamSet` order) when given.
    pub fn new(model: &Model, perturb: Option<(usize, usize, R)>) -> Self {
        let tensors = model
            .tensors()
            .into_iter()
            .enumerate()
            .map(|(i, (name, t))| {
                let mut v: Vec<R> = t.data().iter().map(|&x| R::from_f64(x)).collect();
                if let Some((pi, k, delta)) = perturb {
                    if pi == i {
                        v[k] = v[k] + delta;
                    }
                }
                (name, v)
            })
            .collect();
        Self { tensors }
    }

    fn get(&self, name: &str) -> &[R] {
        &self.tensors[name]
    }
}

struct RefLayer<'a, R> {
    wx: [&'a [R]; 4],
    wh: [&'a [R]; 4],
    peep: [&'a [R]; 3],
    bias: [&'a [R]; 4],
    input: usize,
    hidden: usize,
}

impl<'a, R: Real> RefLayer<'a, R> {
    fn new(p: &'a RefParams<R>, prefix: &str, input: usize, hidden: usize) -> Self {
        let g = |n: &str| p.get(&format!("{prefix}.{n}"));
        Self {
            wx: [g("w_xi"), g("w_xf"), g("w_xc"), g("w_xo")],
            wh: [g("w_hi"), g("w_hf"), g("w_hc"), g("w_ho")],
            peep: [g("w_ci"), g("w_cf"), g("w_co")],
            bias: [g("b_i"), g("b_f"), g("b_c"), g("b_o")],
            input,
            hidden,
        }
    }

    /// One unit-by-unit step for a single sequence. `x = None` is a zero input.
    fn step(&self, x: Option<&[R]>, h: &[R], c: &[R]) -> (Vec<R>, Vec<R>) {
        let pre = |g: usize, j: usize| {
            let mut s = self.bias[g][j];
            if let Some(x) = x {
                for k in 0..self.input {
                    s = s + self.wx[g][j * self.input + k] * x[k];
                }
            }
            for k in 0..self.hidden {
                s = s + self.wh[g][j * self.hidden + k] * h[k];
            }
            s
        };
        let mut h_new = Vec::with_capacity(self.hidden);
        let mut c_new = Vec::with_capacity(self.hidden);
        for j in 0..self.hidden {
            let i = (pre(0, j) + self.peep[0][j] * c[j]).sigmoid();
            let f = (pre(1, j) + self.peep[1][j] * c[j]).sigmoid();
            let cc = f * c[j] + i * pre(2, j).tanh();
            let o = (pre(3, j) + self.peep[2][j] * cc).sigmoid();
            h_new.push(o * cc.tanh());
            c_new.push(cc);
        }
        (h_new, c_new)
    }
}

type State<R> = Vec<(Vec<R>, Vec<R>)>;

fn stack_step<R: Real>(layers: &[RefLayer<'_, R>], x: Option<&[R]>, state: &mut State<R>) {
    let mut below: Option<Vec<R>> = x.map(<[R]>::to_vec);
    for (l, layer) in layers.iter().enumerate() {
        let (h, c) = layer.step(below.as_deref(), &state[l].0, &state[l].1);
        below = Some(h.clone());
        state[l] = (h, c);
    }
}

fn frame<R: Real>(frames: &Tensor, t: usize, b: usize) -> Vec<R> {
    let d = frames.shape()[2];
    frames.row(t)[b * d..(b + 1) * d].iter().map(|&v| R::from_f64(v)).collect()
}

/// Training-mode loss of `model`, summed over pixels and steps and averaged
/// over the batch, evaluated one sequence at a time.
pub(crate) fn reference_loss<R: Real>(
    model: &Model,
    params: &RefParams<R>,
    frames_in: &Tensor,
    frames_future: Option<&Tensor>,
) -> R {
    let s = &model.spec;
    let (d, hid) = (s.input_dim, s.hidden_dim);
    let batch = frames_in.shape()[1];
    let stack = |name: &str| -> Vec<RefLayer<'_, R>> {
        (0..s.layers)
            .map(|l| RefLayer::new(params, &format!("{name}.{l}"), if l == 0 { d } else { hid }, hid))
            .collect()
    };
    let encoder = stack("encoder");
    let term = |z: R, t: R| match s.output_unit {
        OutputUnit::Logistic => {
            let relu = if z.to_f64() > 0.0 { z } else { R::zero() };
            relu - z * t + (R::one() + (-z.abs()).exp()).ln()
        }
        OutputUnit::Linear => (z - t) * (z - t),
    };

    let mut total = R::zero();
    for b in 0..batch {
        let mut state: State<R> = vec![(vec![R::zero(); hid], vec![R::zero(); hid]); s.layers];
        for t in 0..s.t_in {
            stack_step(&encoder, Some(&frame::<R>(frames_in, t, b)), &mut state);
        }
        let branches = [
            ("recon", model.recon.is_some(), s.t_in, s.conditional_recon),
            ("future", model.future.is_some(), s.t_future, s.conditional_future),
        ];
        for (name, present, steps, conditional) in branches {
            if !present {
                continue;
            }
            let targets: Vec<Vec<R>> = (0..steps)
                .map(|t| match name {
                    "recon" => frame(frames_in, s.t_in - 1 - t, b),
                    _ => frame(frames_future.expect("future frames required"), t, b),
                })
                .collect();
            let layers = stack(name);
            let w = params.get(&format!("{name}.readout_w"));
            let bias = params.get(&format!("{name}.readout_b"));
            let mut dec_state = state.clone();
            for t in 0..steps {
                let x = (conditional && t > 0).then(|| targets[t - 1].as_slice());
                stack_step(&layers, x, &mut dec_state);
                let h = &dec_state[s.layers - 1].0;
                for k in 0..d {
                    let mut z = bias[k];
                    for j in 0..hid {
                        z = z + w[k * hid + j] * h[j];
                    }
                    total = total + term(z, targets[t][k]);
                }
            }
        }
    }
    total / R::from_f64(batch as f64)
}
