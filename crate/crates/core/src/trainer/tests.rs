use super::*;
use crate::error::Error;
use crate::params::ParamSet;
use crate::seq2seq::OutputUnit;

fn tiny(variant: Variant, seed: u64) -> TrainConfig {
    let gen = GenConfig { canvas: 18, num_digits: 1, seq_len: 6, vel_min: 1.0, vel_max: 3.0, binarize: true, digit_size: 14 };
    TrainConfig {
        batch_size: 4,
        learning_rate: 0.01,
        max_steps: 10,
        model: ModelSpec { hidden_dim: 12, input_dim: 18 * 18, t_in: 3, t_future: 3, ..ModelSpec::desk(variant) },
        data: DataSource::Generated { gen, digits: DigitSource::Synthetic { count: 30, seed: 1 } },
        ..TrainConfig::desk(variant, seed)
    }
}

fn bytes_after(cfg: &TrainConfig, steps: u64) -> Vec<u8> {
    let mut t = Trainer::new(cfg.clone()).unwrap();
    for _ in 0..steps {
        t.step().unwrap();
    }
    checkpoint_to_bytes(&t.checkpoint()).unwrap()
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let cfg = tiny(Variant::Composite, 5);
    let a = bytes_after(&cfg, 10);
    assert_eq!(a, bytes_after(&cfg, 10));
    assert_ne!(a, bytes_after(&tiny(Variant::Composite, 6), 10));
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let cfg = tiny(Variant::Composite, 7);
    let full = train(cfg.clone(), None).unwrap();
    for k in [0, 1, 4, 9] {
        let mut t = Trainer::new(cfg.clone()).unwrap();
        for _ in 0..k {
            t.step().unwrap();
        }
        let ck = checkpoint_from_bytes(&checkpoint_to_bytes(&t.checkpoint()).unwrap()).unwrap();
        let resumed = Trainer::resume(ck).unwrap().run(None).unwrap();
        assert_eq!(resumed.history, full.history, "interrupted at {k}");
        assert_eq!(checkpoint_to_bytes(&resumed).unwrap(), checkpoint_to_bytes(&full).unwrap());
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let mut cfg = tiny(Variant::Composite, 8);
    cfg.learning_rate = 0.1 + 0.2;
    let ck = train(cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.svck");
    checkpoint_save(&ck, &p).unwrap();
    let loaded = checkpoint_load(&p).unwrap();
    assert_eq!(loaded, ck);
    assert_eq!(checkpoint_to_bytes(&loaded).unwrap(), fs::read(&p).unwrap());
}

#[test]
fn checkpoint_integrity_and_validation() {
    let ck = Trainer::new(tiny(Variant::FuturePredictor, 1)).unwrap().checkpoint();
    let bytes = checkpoint_to_bytes(&ck).unwrap();

    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + header_len]).unwrap();
    assert_eq!(header["step"], 0);
    assert_eq!(header["config"]["model"]["variant"], "future_predictor");

    let fmt = |b: &[u8]| matches!(checkpoint_from_bytes(b), Err(Error::Format(_)));
    let mut flipped = bytes.clone();
    let n = flipped.len();
    flipped[n - 100] ^= 0x10;
    assert!(fmt(&flipped));
    let mut version = bytes.clone();
    version[4] = 2;
    assert!(fmt(&version));
    assert!(fmt(&bytes[..n - 1]));
    assert!(fmt(b"SVT1...................."));

    let mut wrong = ck.clone();
    wrong.config.model.hidden_dim = 13;
    let err = checkpoint_from_bytes(&checkpoint_to_bytes(&wrong).unwrap()).unwrap_err();
    assert!(matches!(&err, Error::Format(m) if m.contains("model/encoder.0.w_xi")), "{err}");
}

#[test]
fn run_writes_outputs_and_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Variant::Composite, 2);
    cfg.checkpoint_every = 5;
    cfg.eval_every = 5;
    let ck = train(cfg.clone(), Some(dir.path())).unwrap();
    assert_eq!(ck.step, 10);
    for f in ["checkpoints/step_000005.svck", "checkpoints/step_000010.svck", "checkpoints/final.svck"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("csv/loss.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,recon_loss,future_loss,total"));
    assert_eq!(csv.lines().count(), 11);

    let bad_dir = tempfile::tempdir().unwrap();
    let mut bad = cfg;
    bad.learning_rate = 1e300;
    bad.grad_clip_norm = None;
    bad.lr_decay = false;
    bad.checkpoint_every = 1;
    bad.model.output_unit = OutputUnit::Linear;
    let err = train(bad, Some(bad_dir.path())).unwrap_err();
    assert!(matches!(err, Error::Training(_) | Error::NonFinite(_)), "{err}");
    let kept = checkpoint_load(bad_dir.path().join("checkpoints/step_000001.svck")).unwrap();
    assert!(kept.model.tensors().iter().all(|(_, t)| t.is_finite()));
    assert!(!bad_dir.path().join("checkpoints/final.svck").exists());
}

#[test]
fn learning_rate_schedule() {
    let mut cfg = tiny(Variant::Composite, 0);
    cfg.max_steps = 300;
    cfg.learning_rate = 0.4;
    assert_eq!(cfg.learning_rate_at(0), 0.4);
    assert_eq!(cfg.learning_rate_at(99), 0.4);
    assert_eq!(cfg.learning_rate_at(100), 0.2);
    assert_eq!(cfg.learning_rate_at(299), 0.1);
    cfg.lr_decay = false;
    assert_eq!(cfg.learning_rate_at(299), 0.4);
}

#[test]
fn config_validation() {
    let mut cfg = tiny(Variant::Composite, 0);
    cfg.model.input_dim = 100;
    assert!(matches!(cfg.validate(), Err(Error::Parameter(_))));
    let mut cfg = tiny(Variant::Composite, 0);
    cfg.model.t_future = 4;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny(Variant::Composite, 0);
    cfg.momentum = -0.1;
    assert!(cfg.validate().is_err());
    assert!(TrainConfig::desk(Variant::Composite, 0).validate().is_ok());
}

#[test]
fn dataset_source_matches_generated_batches() {
    let cfg = tiny(Variant::Composite, 3);
    let feed = DataFeed::open(&cfg).unwrap();
    let DataFeed::Stream(stream) = &feed else { unreachable!() };
    let seqs: Vec<Tensor> = (0..6).map(|n| stream.sequence_at(n).frames).collect();
    let all = Tensor::stack(&seqs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.svt");
    tensor_io::save(&path, &all).unwrap();
    let ds = TrainConfig { data: DataSource::Dataset { path }, ..cfg.clone() };
    let dfeed = DataFeed::open(&ds).unwrap();
    assert_eq!(dfeed.batch(0, 4, &cfg.model).unwrap(), feed.batch(0, 4, &cfg.model).unwrap());
    // cycles past the end
    assert_eq!(dfeed.batch(6, 2, &cfg.model).unwrap(), feed.batch(0, 2, &cfg.model).unwrap());
    let mut t = Trainer::new(ds).unwrap();
    assert!(t.step().unwrap().total.is_finite());
}

#[test]
fn training_reduces_loss_on_tiny_problem() {
    let mut cfg = tiny(Variant::Composite, 4);
    cfg.max_steps = 60;
    cfg.learning_rate = 0.05;
    let ck = train(cfg, None).unwrap();
    let first = ck.history[0].total;
    let last: f64 = ck.history[50..].iter().map(|r| r.total).sum::<f64>() / 10.0;
    assert!(last < 0.7 * first, "{first} -> {last}");
}

fn small_model(variant: Variant, conditional: bool, layers: usize) -> (Model, Batch) {
    let spec = ModelSpec {
        variant,
        layers,
        hidden_dim: 5,
        input_dim: 4,
        t_in: 3,
        t_future: 2,
        conditional_recon: conditional,
        conditional_future: conditional,
        output_unit: OutputUnit::Logistic,
    };
    let mut m = Model::build(&spec, &RngState::new(1)).unwrap();
    let mut rng = RngState::new(2);
    for (_, t) in m.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.uniform(-0.5, 0.5);
        }
    }
    let mut frames = |t: usize| {
        Tensor::new(vec![t, 2, 4], (0..t * 8).map(|_| f64::from(u8::from(rng.bernoulli(0.4)))).collect()).unwrap()
    };
    let batch = Batch { input: frames(3), future: Some(frames(2)) };
    (m, batch)
}

#[test]
fn grad_check_catches_a_sign_flip() {
    let (m, batch) = small_model(Variant::Composite, true, 2);
    let opts = GradCheckOptions::default();
    let good = grad_check(&m, &batch, &opts).unwrap();
    assert!(good.max_rel_error < 1e-5, "{good:?}");
    let corrupt = |m: &Model, tr: &crate::seq2seq::ForwardTrace| {
        let mut g = backward(m, tr)?;
        let w = &mut g.encoder[1].w_cf;
        let v = w.data()[0];
        w.data_mut()[0] = -v;
        Ok(g)
    };
    let opts_all = GradCheckOptions { sample: None, ..opts };
    let bad = grad_check_with(&m, &batch, &opts_all, corrupt).unwrap();
    assert!(bad.max_rel_error > 1e-2, "{bad:?}");
    assert_eq!((bad.tensor.as_str(), bad.index), ("encoder.1.w_cf", 0));
}

#[test]
fn grad_check_sampling_and_step_size_robustness() {
    let (m, batch) = small_model(Variant::Composite, false, 1);
    let opts = GradCheckOptions { sample: Some(3), ..Default::default() };
    let r = grad_check(&m, &batch, &opts).unwrap();
    let n_tensors = m.tensors().len();
    assert_eq!(r.per_tensor.len(), n_tensors);
    assert_eq!(r.checked, r.per_tensor.iter().map(|t| t.checked).sum::<usize>());
    assert!(r.per_tensor.iter().all(|t| t.checked == 3.min(m.tensors().iter().find(|(n, _)| *n == t.name).unwrap().1.len())));

    let full = GradCheckOptions { sample: None, ..Default::default() };
    let e6 = grad_check(&m, &batch, &full).unwrap().max_rel_error;
    let e7 = grad_check(&m, &batch, &GradCheckOptions { eps: 1e-7, ..full }).unwrap().max_rel_error;
    // correct gradient: the smaller step must not report a worse error
    // (no roundoff blow-up); the residual is O(eps^2) truncation
    assert!(e6 < 1e-5 && e7 < 1e-5);
    assert!(e7 <= 10.0 * e6, "{e6:e} vs {e7:e}");

    // wrong gradient: both step sizes report the same error magnitude
    let corrupt = |m: &Model, tr: &crate::seq2seq::ForwardTrace| {
        let mut g = backward(m, tr)?;
        g.encoder[0].b_o.scale(-1.0);
        Ok(g)
    };
    let b6 = grad_check_with(&m, &batch, &full, corrupt).unwrap().max_rel_error;
    let b7 = grad_check_with(&m, &batch, &GradCheckOptions { eps: 1e-7, ..full }, corrupt).unwrap().max_rel_error;
    assert!(b6 > 1e-2 && (b6.log10() - b7.log10()).abs() <= 1.0, "{b6:e} vs {b7:e}");
}

#[test]
fn grad_check_guards_model_size() {
    let spec = ModelSpec { hidden_dim: 64, input_dim: 300, ..ModelSpec::desk(Variant::Composite) };
    let m = Model::build(&spec, &RngState::new(0)).unwrap();
    assert!(m.num_params() > GRAD_CHECK_MAX_PARAMS);
    let batch = Batch { input: Tensor::zeros(&[10, 1, 300]), future: Some(Tensor::zeros(&[10, 1, 300])) };
    assert!(matches!(grad_check(&m, &batch, &GradCheckOptions::default()), Err(Error::Usage(_))));
}
