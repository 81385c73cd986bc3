mod common;

use common::AdamOracle;
use gconv_core::nn::ConvKind;
use gconv_core::train::{
    adam_step, loss_d_value, loss_g_value, sample_gmm, train_gan, AdamConfig, AdamState, GmmSpec,
    LossKind, TrainConfig, HISTORY_HEADER,
};
use gconv_core::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn loss_examples() {
    let d = |r: f64, f: f64, k| loss_d_value(&[r, r], &[f, f], k).unwrap();
    assert_eq!(d(1.0, -1.0, LossKind::Hinge), 0.0);
    assert_eq!(d(0.0, 0.0, LossKind::Hinge), 2.0);
    assert!((d(0.0, 0.0, LossKind::CrossEntropy) - 2.0 * 2f64.ln()).abs() < 1e-15);
    assert_eq!(loss_g_value(&[0.75; 4], LossKind::Hinge).unwrap(), -0.75);
    assert!((loss_g_value(&[0.7; 3], LossKind::Hinge).unwrap() + 0.7).abs() < 1e-15);
    assert_eq!(loss_g_value(&[1.0, 1.0], LossKind::Lsgan).unwrap(), 0.0);
    assert!((loss_g_value(&[0.0], LossKind::CrossEntropy).unwrap() - 2f64.ln()).abs() < 1e-15);
    assert_eq!(d(1.0, 0.0, LossKind::Lsgan), 0.0);
    assert!(loss_d_value(&[], &[], LossKind::Hinge).is_err());
    assert!(loss_g_value(&[], LossKind::Lsgan).is_err());
}

#[test]
fn cross_entropy_is_stable_for_extreme_logits() {
    let v = loss_d_value(&[800.0], &[-800.0], LossKind::CrossEntropy).unwrap();
    assert!(v.is_finite() && v >= 0.0 && v < 1e-300);
    let v = loss_d_value(&[-800.0], &[800.0], LossKind::CrossEntropy).unwrap();
    assert!((v - 1600.0).abs() < 1e-9);
}

#[test]
fn adam_first_step_by_hand() {
    let mut params = vec![Tensor::scalar(1.0)];
    let mut st = AdamState::new(AdamConfig::new(0.1), &[&[]]);
    adam_step(&mut params, &[Tensor::scalar(4.0)], &mut st).unwrap();
    assert_eq!(st.m_hat(0).item().unwrap(), 4.0);
    assert!((st.v_hat(0).item().unwrap() - 16.0).abs() < 1e-12);
    let want = 1.0 - 0.1 * 4.0 / (4.0 + 1e-8);
    assert!((params[0].item().unwrap() - want).abs() < 1e-15);
}

#[test]
fn adam_zero_gradient_only_counts() {
    let mut params = vec![Tensor::from_rows(&[&[1.0, -2.0]]).unwrap()];
    let before = params.clone();
    let mut st = AdamState::new(AdamConfig::new(0.01), &[&[1, 2]]);
    for t in 1..=3 {
        adam_step(&mut params, &[Tensor::zeros(vec![1, 2])], &mut st).unwrap();
        assert_eq!(st.t, t);
    }
    assert_eq!(params, before);
}

#[test]
fn adam_three_steps_match_oracle() {
    // f(p) = 1/2 sum a_i p_i^2 with gradient a_i p_i
    let a = [0.5, 2.0, -1.5, 3.0];
    let p0 = [1.0, -0.3, 0.7, 2.2];
    let mut params = vec![Tensor::new(vec![4], p0.to_vec()).unwrap()];
    let mut st = AdamState::new(AdamConfig::new(0.05), &[&[4]]);
    let mut oracle = AdamOracle::new(0.05, 4);
    let mut q = p0.to_vec();
    for _ in 0..3 {
        let g: Vec<f64> = params[0]
            .data()
            .iter()
            .zip(&a)
            .map(|(p, a)| a * p)
            .collect();
        adam_step(&mut params, &[Tensor::new(vec![4], g).unwrap()], &mut st).unwrap();
        let g: Vec<f64> = q.iter().zip(&a).map(|(p, a)| a * p).collect();
        oracle.step(&mut q, &g);
        for (x, y) in params[0].data().iter().zip(&q) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(st.m_hat(0).data(), st.m[0].data());
    }
}

#[test]
fn adam_nan_gradient_names_parameter() {
    let mut params = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
    let mut st = AdamState::new(AdamConfig::new(0.1), &[&[], &[]]);
    let err = adam_step(
        &mut params,
        &[Tensor::scalar(1.0), Tensor::scalar(f64::NAN)],
        &mut st,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Training { .. }));
    assert!(err.to_string().contains('1'));
    assert_eq!(st.t, 0);
}

#[test]
fn gmm_sampling_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tight = GmmSpec {
        std: 1e-12,
        ..GmmSpec::default()
    };
    let s = sample_gmm(&tight, 500, &mut rng).unwrap();
    let centers = tight.centers();
    for p in s.data().chunks(2) {
        let d = centers
            .iter()
            .map(|c| (p[0] - c[0]).hypot(p[1] - c[1]))
            .fold(f64::MAX, f64::min);
        assert!(d < 1e-9);
    }

    let spec = GmmSpec::default();
    let s = sample_gmm(&spec, 1_000_000, &mut rng).unwrap();
    let (mut mx, mut my) = (0.0, 0.0);
    for p in s.data().chunks(2) {
        mx += p[0];
        my += p[1];
    }
    assert!((mx / 1e6).abs() < 0.01 && (my / 1e6).abs() < 0.01);

    let n = 100_000;
    let s = sample_gmm(&spec, n, &mut rng).unwrap();
    let mut counts = [0usize; 8];
    for p in s.data().chunks(2) {
        let k = (0..8)
            .min_by(|&a, &b| {
                let da = (p[0] - centers[a][0]).hypot(p[1] - centers[a][1]);
                let db = (p[0] - centers[b][0]).hypot(p[1] - centers[b][1]);
                da.total_cmp(&db)
            })
            .unwrap();
        counts[k] += 1;
    }
    let mean = n as f64 / 8.0;
    let sd = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
    }
    assert!((spec.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(sample_gmm(&spec, 0, &mut rng).is_err());
}

fn short(kind: ConvKind, iterations: usize) -> TrainConfig {
    TrainConfig {
        seed: 3,
        iterations,
        batch_g: 32,
        batch_d: 16,
        eval_every: 5,
        eval_samples: 200,
        g_kind: kind,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_iterations_keep_initialization() {
    let cfg = short(ConvKind::GConv, 0);
    let arch = cfg.toy_arch();
    let out = train_gan(&cfg, &GmmSpec::default(), &arch).unwrap();
    assert!(out.history.is_empty());
    let g0 = gconv_core::zoo::build_model(&arch.0).unwrap();
    let d0 = gconv_core::zoo::build_model(&arch.1).unwrap();
    let (g, d) = out.checkpoints();
    assert_eq!(g, gconv_core::checkpoint::Checkpoint::capture(&g0.params));
    assert_eq!(d, gconv_core::checkpoint::Checkpoint::capture(&d0.params));
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let cfg = TrainConfig {
        lr_g: 0.0,
        lr_d: 0.0,
        ..short(ConvKind::GConv, 6)
    };
    let arch = cfg.toy_arch();
    let out = train_gan(&cfg, &GmmSpec::default(), &arch).unwrap();
    let g0 = gconv_core::zoo::build_model(&arch.0).unwrap();
    let trainable = |s: &gconv_core::nn::ParamStore| -> Vec<Tensor> {
        s.entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.clone())
            .collect()
    };
    assert_eq!(trainable(&out.generator.params), trainable(&g0.params));
}

#[test]
fn equal_seeds_give_identical_histories() {
    for kind in [ConvKind::Conv, ConvKind::GConv] {
        let cfg = short(kind, 12);
        let a = train_gan(&cfg, &GmmSpec::default(), &cfg.toy_arch()).unwrap();
        let b = train_gan(&cfg, &GmmSpec::default(), &cfg.toy_arch()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoints(), b.checkpoints());
        let iters: Vec<usize> = a.history.records.iter().map(|r| r.iter).collect();
        assert_eq!(iters, [5, 10, 12]);
        let csv = a.history.to_csv();
        assert!(csv.starts_with(HISTORY_HEADER));
        assert_eq!(csv.lines().count(), 4);
    }
}

#[test]
fn divergence_reports_iteration() {
    let cfg = TrainConfig {
        lr_g: 1e300,
        lr_d: 1e300,
        loss: LossKind::Lsgan,
        ..short(ConvKind::Conv, 50)
    };
    match train_gan(&cfg, &GmmSpec::default(), &cfg.toy_arch()) {
        Err(Error::Training { iteration, .. }) => assert!(iteration >= 1 && iteration <= 50),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training should have diverged"),
    }
}

#[test]
fn preset_regimes_validate() {
    let t = TrainConfig::ttur();
    assert_eq!((t.lr_d, 4.0 * t.lr_g, t.n_dis), (4e-4, 4e-4, 1));
    t.validate().unwrap();
    let c = TrainConfig::cifar();
    assert_eq!((c.lr_g, c.lr_d, c.n_dis), (2e-4, 2e-4, 5));
    assert_eq!(c.batch_g, 2 * c.batch_d);
    c.validate().unwrap();
    assert!(TrainConfig {
        n_dis: 0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        lr_g: f64::NAN,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        lr_d: -1.0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
}

#[test]
fn linear_decay_over_final_window() {
    let c = TrainConfig {
        iterations: 100,
        decay_window: 40,
        ..TrainConfig::default()
    };
    assert_eq!(c.decay_factor(1), 1.0);
    assert_eq!(c.decay_factor(61), 1.0);
    assert_eq!(c.decay_factor(62), 39.0 / 40.0);
    assert_eq!(c.decay_factor(100), 1.0 / 40.0);
}

#[test]
fn config_rejects_unknown_fields() {
    let ok: TrainConfig = serde_json::from_str(r#"{"seed": 9, "loss": "lsgan"}"#).unwrap();
    assert_eq!((ok.seed, ok.loss), (9, LossKind::Lsgan));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"sead": 9}"#).is_err());
}
