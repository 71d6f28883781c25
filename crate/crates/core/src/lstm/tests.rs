use super::*;
use crate::error::Error;
use crate::tensor::sigmoid;
use proptest::prelude::*;

fn random_params(input: usize, hidden: usize, seed: u64) -> LstmParams {
    let mut rng = RngState::new(seed);
    let mut p = LstmParams::init(input, hidden, &mut rng).unwrap();
    // peepholes and biases start at zero; give them values so their paths are exercised
    for (name, t) in p.tensors_mut() {
        if name.starts_with("w_c") || name.starts_with("b_") {
            for v in t.data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }
    p
}

fn random_tensor(shape: &[usize], scale: f64, rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

#[test]
fn init_shapes_bounds_and_zeros() {
    let p = LstmParams::init(2, 3, &mut RngState::new(1)).unwrap();
    assert_eq!(p.w_xi.shape(), &[3, 2]);
    assert_eq!(p.w_hf.shape(), &[3, 3]);
    let bx = 1.0 / 2f64.sqrt();
    for w in p.input_weights() {
        assert!(w.data().iter().all(|v| v.abs() <= bx));
    }
    let bh = 1.0 / 3f64.sqrt();
    for w in p.recurrent_weights() {
        assert!(w.data().iter().all(|v| v.abs() <= bh));
    }
    assert!(p.b_f.data().iter().all(|&v| v == 0.0));
    for t in [&p.w_ci, &p.w_cf, &p.w_co, &p.b_i, &p.b_c, &p.b_o] {
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
    assert_eq!(p.num_params(), LstmParams::count(2, 3));
}

#[test]
fn init_is_deterministic_and_rejects_zero_dims() {
    let a = LstmParams::init(4, 5, &mut RngState::new(9)).unwrap();
    let b = LstmParams::init(4, 5, &mut RngState::new(9)).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        LstmParams::init(0, 5, &mut RngState::new(9)),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(
        LstmParams::init(3, 0, &mut RngState::new(9)),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn zero_network_fixed_point() {
    let p = LstmParams::zeros(3, 2);
    let x = Tensor::new(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap();
    let (s, c) = lstm_step_forward(&p, &x, &LstmState::zeros(1, 2)).unwrap();
    assert!(c.i.data().iter().chain(c.f.data()).chain(c.o.data()).all(|&v| v == 0.5));
    assert!(s.c.data().iter().chain(s.h.data()).all(|&v| v == 0.0));
}

#[test]
fn saturated_forget_gate_keeps_cell() {
    let mut p = LstmParams::zeros(2, 3);
    p.b_f.fill(100.0);
    let prev = LstmState {
        h: Tensor::zeros(&[1, 3]),
        c: Tensor::new(vec![1, 3], vec![0.7, -2.0, 5.0]).unwrap(),
    };
    let (s, _) = lstm_step_forward(&p, &Tensor::zeros(&[1, 2]), &prev).unwrap();
    for (a, b) in s.c.data().iter().zip(prev.c.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cell_persists_over_100_steps() {
    let mut rng = RngState::new(4);
    let mut p = LstmParams::init(2, 3, &mut rng).unwrap();
    p.b_f.fill(100.0);
    p.b_i.fill(-100.0);
    let c0 = Tensor::new(vec![1, 3], vec![0.25, -0.5, 1.5]).unwrap();
    let mut s = LstmState { h: Tensor::zeros(&[1, 3]), c: c0.clone() };
    for _ in 0..100 {
        let x = random_tensor(&[1, 2], 1.0, &mut rng);
        s = lstm_step_forward(&p, &x, &s).unwrap().0;
    }
    for (a, b) in s.c.data().iter().zip(c0.data()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn scalar_unit_matches_hand_evaluation() {
    let mut p = LstmParams::zeros(1, 1);
    let set = |t: &mut Tensor, v: f64| t.data_mut()[0] = v;
    set(&mut p.w_xi, 0.5);
    set(&mut p.w_xf, -0.3);
    set(&mut p.w_xc, 0.8);
    set(&mut p.w_xo, 0.2);
    set(&mut p.w_hi, 0.1);
    set(&mut p.w_hf, 0.4);
    set(&mut p.w_hc, -0.6);
    set(&mut p.w_ho, 0.7);
    set(&mut p.w_ci, 0.25);
    set(&mut p.w_cf, -0.15);
    set(&mut p.w_co, 0.35);
    set(&mut p.b_i, 0.05);
    set(&mut p.b_f, 1.0);
    set(&mut p.b_c, -0.1);
    set(&mut p.b_o, 0.2);
    let (x, h0, c0) = (1.5, -0.4, 0.9);
    let i = sigmoid(0.5 * x + 0.1 * h0 + 0.25 * c0 + 0.05);
    let f = sigmoid(-0.3 * x + 0.4 * h0 - 0.15 * c0 + 1.0);
    let c = f * c0 + i * (0.8 * x - 0.6 * h0 - 0.1).tanh();
    let o = sigmoid(0.2 * x + 0.7 * h0 + 0.35 * c + 0.2);
    let h = o * c.tanh();

    let prev = LstmState {
        h: Tensor::new(vec![1, 1], vec![h0]).unwrap(),
        c: Tensor::new(vec![1, 1], vec![c0]).unwrap(),
    };
    let xt = Tensor::new(vec![1, 1], vec![x]).unwrap();
    let (s, cache) = lstm_step_forward(&p, &xt, &prev).unwrap();
    assert!((cache.i.data()[0] - i).abs() < 1e-14);
    assert!((cache.f.data()[0] - f).abs() < 1e-14);
    assert!((cache.o.data()[0] - o).abs() < 1e-14);
    assert!((s.c.data()[0] - c).abs() < 1e-14);
    assert!((s.h.data()[0] - h).abs() < 1e-14);
}

#[test]
fn shape_errors() {
    let p = LstmParams::zeros(3, 2);
    let bad_x = Tensor::zeros(&[1, 4]);
    assert!(matches!(
        lstm_step_forward(&p, &bad_x, &LstmState::zeros(1, 2)),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        lstm_step_forward(&p, &Tensor::zeros(&[1, 3]), &LstmState::zeros(1, 5)),
        Err(Error::Dimension(_))
    ));
    let (_, cache) = lstm_step_forward(&p, &Tensor::zeros(&[1, 3]), &LstmState::zeros(1, 2)).unwrap();
    assert!(matches!(
        lstm_step_backward(&p, &cache, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[1, 2])),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn zero_upstream_gradient_gives_zero() {
    let p = random_params(5, 4, 3);
    let mut rng = RngState::new(8);
    let x = random_tensor(&[2, 5], 1.0, &mut rng);
    let prev = LstmState { h: random_tensor(&[2, 4], 0.9, &mut rng), c: random_tensor(&[2, 4], 2.0, &mut rng) };
    let (_, cache) = lstm_step_forward(&p, &x, &prev).unwrap();
    let z = Tensor::zeros(&[2, 4]);
    let g = lstm_step_backward(&p, &cache, &z, &z).unwrap();
    assert!(g.grad_x.data().iter().all(|&v| v == 0.0));
    assert!(g.grad_h_prev.data().iter().all(|&v| v == 0.0));
    assert!(g.grad_c_prev.data().iter().all(|&v| v == 0.0));
    assert_eq!(g.params.global_norm(), 0.0);
}

#[test]
fn cache_reproduces_forward() {
    let p = random_params(3, 4, 21);
    let mut rng = RngState::new(2);
    let x = random_tensor(&[2, 3], 1.0, &mut rng);
    let prev = LstmState { h: random_tensor(&[2, 4], 0.9, &mut rng), c: random_tensor(&[2, 4], 2.0, &mut rng) };
    let (s1, c1) = lstm_step_forward(&p, &x, &prev).unwrap();
    let (s2, c2) = lstm_step_forward(&p, c1.x.as_ref().unwrap(), &LstmState { h: c1.h_prev.clone(), c: c1.c_prev.clone() }).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(c1, c2);
    assert_eq!(c1.h(), s1.h);
}

/// Loss `Σ a⊙h + Σ b⊙c` so that `∂L/∂h = a` and the direct `∂L/∂c = b`.
struct Probe {
    x: Tensor,
    prev: LstmState,
    a: Tensor,
    b: Tensor,
}

impl Probe {
    fn new(batch: usize, input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = RngState::new(seed);
        Self {
            x: random_tensor(&[batch, input], 1.0, &mut rng),
            prev: LstmState {
                h: random_tensor(&[batch, hidden], 0.9, &mut rng),
                c: random_tensor(&[batch, hidden], 1.5, &mut rng),
            },
            a: random_tensor(&[batch, hidden], 1.0, &mut rng),
            b: random_tensor(&[batch, hidden], 1.0, &mut rng),
        }
    }

    fn loss(&self, p: &LstmParams, x: &Tensor, prev: &LstmState) -> f64 {
        let (s, _) = lstm_step_forward(p, x, prev).unwrap();
        let dot = |u: &Tensor, v: &Tensor| u.data().iter().zip(v.data()).map(|(a, b)| a * b).sum::<f64>();
        dot(&s.h, &self.a) + dot(&s.c, &self.b)
    }

    /// Largest relative error between analytic and central-difference
    /// gradients over every parameter and input coordinate.
    fn max_rel_error(&self, p: &LstmParams, eps: f64) -> f64 {
        let (_, cache) = lstm_step_forward(p, &self.x, &self.prev).unwrap();
        let g = lstm_step_backward(p, &cache, &self.a, &self.b).unwrap();
        let rel = |an: f64, num: f64| (an - num).abs() / an.abs().max(1e-12);
        let mut worst = 0.0f64;
        let analytic = g.params.tensors();
        let mut q = p.clone();
        for (idx, (_, ga)) in analytic.iter().enumerate() {
            for k in 0..ga.len() {
                let orig = q.tensors()[idx].1.data()[k];
                q.tensors_mut()[idx].1.data_mut()[k] = orig + eps;
                let lp = self.loss(&q, &self.x, &self.prev);
                q.tensors_mut()[idx].1.data_mut()[k] = orig - eps;
                let lm = self.loss(&q, &self.x, &self.prev);
                q.tensors_mut()[idx].1.data_mut()[k] = orig;
                worst = worst.max(rel(ga.data()[k], (lp - lm) / (2.0 * eps)));
            }
        }
        let mut check_input = |t: &Tensor, grad: &Tensor, f: &dyn Fn(&Tensor) -> f64| {
            for k in 0..t.len() {
                let mut tp = t.clone();
                tp.data_mut()[k] += eps;
                let mut tm = t.clone();
                tm.data_mut()[k] -= eps;
                worst = worst.max(rel(grad.data()[k], (f(&tp) - f(&tm)) / (2.0 * eps)));
            }
        };
        check_input(&self.x, &g.grad_x, &|x| self.loss(p, x, &self.prev));
        check_input(&self.prev.h, &g.grad_h_prev, &|h| {
            self.loss(p, &self.x, &LstmState { h: h.clone(), c: self.prev.c.clone() })
        });
        check_input(&self.prev.c, &g.grad_c_prev, &|c| {
            self.loss(p, &self.x, &LstmState { h: self.prev.h.clone(), c: c.clone() })
        });
        worst
    }
}

#[test]
fn scalar_unit_gradients_match_finite_differences() {
    let p = random_params(1, 1, 77);
    let probe = Probe::new(1, 1, 1, 78);
    let err = probe.max_rel_error(&p, 1e-6);
    assert!(err < 1e-7, "max rel error {err}");
}

#[test]
fn layer_gradients_match_finite_differences() {
    let p = random_params(5, 8, 5);
    let probe = Probe::new(3, 5, 8, 6);
    let err = probe.max_rel_error(&p, 1e-6);
    assert!(err < 1e-6, "max rel error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adjoint_matches_central_differences(seed in any::<u64>(), batch in 1usize..3, input in 1usize..4, hidden in 1usize..4) {
        let p = random_params(input, hidden, seed);
        let probe = Probe::new(batch, input, hidden, seed.wrapping_add(1));
        let err = probe.max_rel_error(&p, 1e-6);
        prop_assert!(err < 1e-5, "max rel error {}", err);
    }

    #[test]
    fn gates_stay_in_open_unit_interval(seed in any::<u64>(), scale in 0.1f64..5.0) {
        let mut rng = RngState::new(seed);
        let p = random_params(3, 4, seed ^ 1);
        let x = random_tensor(&[2, 3], scale, &mut rng);
        let prev = LstmState { h: random_tensor(&[2, 4], 1.0, &mut rng), c: random_tensor(&[2, 4], scale, &mut rng) };
        let (s, c) = lstm_step_forward(&p, &x, &prev).unwrap();
        for v in c.i.data().iter().chain(c.f.data()).chain(c.o.data()) {
            prop_assert!(*v > 0.0 && *v < 1.0);
        }
        for v in c.g.data().iter().chain(s.h.data()) {
            prop_assert!(v.abs() < 1.0);
        }
    }
}
