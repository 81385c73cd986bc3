mod common;

use common::{conv_same, jacobi_singular_values, sigmoid};
use gconv_core::nn::init::Init;
use gconv_core::nn::{
    power_iteration, spectral_normalize, BatchNorm, ChannelGate, ConvKind, Dense, Forward,
    LatentBatchNorm, Mode, ParamStore, ResBlockD, ResBlockG, SpectralState, BN_EPS,
};
use gconv_core::{Error, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs `f` on a fresh tape and returns the output value.
fn eval<F>(store: &mut ParamStore, mode: Mode, x: &Tensor, z: Option<&Tensor>, f: F) -> Tensor
where
    F: FnOnce(
        &mut Forward<'_>,
        gconv_core::Var,
        Option<gconv_core::Var>,
    ) -> gconv_core::Result<gconv_core::Var>,
{
    let mut tape = Tape::new();
    let mut fw = Forward::new(&mut tape, store, mode);
    let xv = fw.tape.constant(x.clone());
    let zv = z.map(|z| fw.tape.constant(z.clone()));
    let y = f(&mut fw, xv, zv).unwrap();
    let out = fw.tape.value(y).clone();
    out
}

fn set(store: &mut ParamStore, name: &str, value: Tensor) {
    let id = store.find(name).unwrap_or_else(|| panic!("no {name}"));
    *store.get_mut(id) = value;
}

fn zero_all(store: &mut ParamStore, except: &[&str]) {
    for e in store.entries_mut() {
        if e.trainable && !except.iter().any(|s| e.name.ends_with(s)) {
            e.value = Tensor::zeros(e.value.shape().to_vec());
        }
    }
}

/// Per-channel batch mean and biased variance over every axis but the last.
fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let c = *x.shape().last().unwrap();
    let rows = x.len() / c;
    let mut mean = vec![0.0; c];
    for row in x.data().chunks(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / rows as f64;
        }
    }
    let mut var = vec![0.0; c];
    for row in x.data().chunks(c) {
        for j in 0..c {
            var[j] += (row[j] - mean[j]).powi(2) / rows as f64;
        }
    }
    (mean, var)
}

#[test]
fn batchnorm_standardizes_in_training() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 3);
    let x = Tensor::randn(vec![4, 3, 3, 3], &mut r).map(|v| 5.0 * v + 1.0);
    let y = eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
        bn.forward(fw, x)
    });
    let (_, var_x) = channel_stats(&x);
    let (mean, var) = channel_stats(&y);
    for j in 0..3 {
        assert!(mean[j].abs() < 1e-6);
        assert!((var[j] - var_x[j] / (var_x[j] + BN_EPS)).abs() < 1e-12);
        assert!((var[j] - 1.0).abs() < 1e-6);
    }

    set(&mut store, "bn.gamma", Tensor::zeros(vec![3]));
    set(
        &mut store,
        "bn.beta",
        Tensor::from_rows(&[&[1.0, -2.0, 0.5]])
            .unwrap()
            .reshape(vec![3])
            .unwrap(),
    );
    let y = eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
        bn.forward(fw, x)
    });
    for row in y.data().chunks(3) {
        assert_eq!(row, &[1.0, -2.0, 0.5]);
    }
}

#[test]
fn batchnorm_eval_uses_running_statistics() {
    let mut r = rng(2);
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 2);
    let rm = [0.5, -1.0];
    let rv = [4.0, 0.25];
    *store.get_mut(bn.running_mean()) = Tensor::new(vec![2], rm.to_vec()).unwrap();
    *store.get_mut(bn.running_var()) = Tensor::new(vec![2], rv.to_vec()).unwrap();
    let gamma = [1.5, -0.5];
    let beta = [0.1, 0.2];
    set(
        &mut store,
        "bn.gamma",
        Tensor::new(vec![2], gamma.to_vec()).unwrap(),
    );
    set(
        &mut store,
        "bn.beta",
        Tensor::new(vec![2], beta.to_vec()).unwrap(),
    );
    let x = Tensor::randn(vec![1, 2, 2, 2], &mut r);
    let y = eval(&mut store, Mode::Eval, &x, None, |fw, x, _| {
        bn.forward(fw, x)
    });
    for (i, (&xv, &yv)) in x.data().iter().zip(y.data()).enumerate() {
        let j = i % 2;
        let want = gamma[j] * (xv - rm[j]) / (rv[j] + BN_EPS).sqrt() + beta[j];
        assert!((yv - want).abs() < 1e-14);
    }
}

#[test]
fn batchnorm_updates_running_stats_with_momentum() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 2);
    let x = Tensor::randn(vec![3, 2, 2, 2], &mut r);
    eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
        bn.forward(fw, x)
    });
    let (mean, var) = channel_stats(&x);
    let rows = 12.0;
    for j in 0..2 {
        assert!((store.get(bn.running_mean()).data()[j] - 0.1 * mean[j]).abs() < 1e-14);
        let unbiased = var[j] * rows / (rows - 1.0);
        assert!((store.get(bn.running_var()).data()[j] - (0.9 + 0.1 * unbiased)).abs() < 1e-14);
    }
}

#[test]
fn batchnorm_rejects_single_sample_training() {
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 2);
    let mut tape = Tape::new();
    let mut fw = Forward::new(&mut tape, &mut store, Mode::Train);
    let x = fw.tape.constant(Tensor::ones(vec![1, 2, 2, 2]));
    assert!(matches!(bn.forward(&mut fw, x), Err(Error::Contract(_))));
}

#[test]
fn latent_batchnorm_reductions() {
    let mut r = rng(4);
    let x = Tensor::randn(vec![3, 2, 2, 4], &mut r);
    let z = Tensor::randn(vec![3, 5], &mut r);

    let mut plain = ParamStore::new();
    let bn = BatchNorm::new(&mut plain, "bn", 4);
    let want = eval(&mut plain, Mode::Train, &x, None, |fw, x, _| {
        bn.forward(fw, x)
    });

    let mut store = ParamStore::new();
    let lbn = LatentBatchNorm::new(&mut store, "lbn", 4, 5, Init::Zeros, &mut r);
    let y = eval(&mut store, Mode::Train, &x, Some(&z), |fw, x, z| {
        lbn.forward(fw, x, z.unwrap())
    });
    assert_eq!(y, want);

    let mut store = ParamStore::new();
    let lbn = LatentBatchNorm::new(&mut store, "lbn", 4, 5, Init::Orthogonal, &mut r);
    let zero = Tensor::zeros(vec![3, 5]);
    let y = eval(&mut store, Mode::Train, &x, Some(&zero), |fw, x, z| {
        lbn.forward(fw, x, z.unwrap())
    });
    assert_eq!(y, want);
}

#[test]
fn latent_batchnorm_matches_two_step_oracle() {
    let mut r = rng(5);
    let (b, c, d_z) = (3, 4, 2);
    let x = Tensor::randn(vec![b, 2, 3, c], &mut r);
    let z = Tensor::randn(vec![b, d_z], &mut r);
    let mut store = ParamStore::new();
    let lbn = LatentBatchNorm::new(&mut store, "lbn", c, d_z, Init::Scaled, &mut r);
    let wg = store.get(lbn.w_gamma).clone();
    let wb = store.get(lbn.w_beta).clone();
    let y = eval(&mut store, Mode::Train, &x, Some(&z), |fw, x, z| {
        lbn.forward(fw, x, z.unwrap())
    });

    let (mean, var) = channel_stats(&x);
    let per = x.len() / b;
    for i in 0..b {
        let gamma: Vec<f64> = (0..c)
            .map(|j| {
                1.0 + (0..d_z)
                    .map(|k| z.at(&[i, k]) * wg.at(&[k, j]))
                    .sum::<f64>()
            })
            .collect();
        let beta: Vec<f64> = (0..c)
            .map(|j| (0..d_z).map(|k| z.at(&[i, k]) * wb.at(&[k, j])).sum())
            .collect();
        for q in 0..per {
            let idx = i * per + q;
            let j = idx % c;
            let xhat = (x.data()[idx] - mean[j]) / (var[j] + BN_EPS).sqrt();
            assert!((y.data()[idx] - (gamma[j] * xhat + beta[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn channel_gate_examples() {
    let mut r = rng(6);
    let mut store = ParamStore::new();
    let gate = ChannelGate::new(&mut store, "gate", 16, Init::Zeros, &mut r).unwrap();
    let x = Tensor::randn(vec![2, 3, 3, 16], &mut r);
    let y = eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
        gate.forward(fw, x)
    });
    assert_eq!(y, x.scale(0.5));
    let zero = Tensor::zeros(vec![2, 3, 3, 16]);
    assert_eq!(
        eval(&mut store, Mode::Train, &zero, None, |fw, x, _| gate
            .forward(fw, x)),
        zero
    );
    assert!(ChannelGate::new(&mut store, "bad", 12, Init::Zeros, &mut r).is_err());
}

#[test]
fn channel_gate_matches_oracle() {
    let mut r = rng(7);
    let c = 16;
    let mut store = ParamStore::new();
    let gate = ChannelGate::new(&mut store, "gate", c, Init::Orthogonal, &mut r).unwrap();
    let w1 = store.get(gate.w1).clone();
    let w2 = store.get(gate.w2).clone();
    let x = Tensor::randn(vec![2, 3, 2, c], &mut r);
    let y = eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
        gate.forward(fw, x)
    });
    let means = common::spatial_mean(&x);
    for i in 0..2 {
        let hid: Vec<f64> = (0..c / 8)
            .map(|h| {
                (0..c)
                    .map(|j| means[i][j] * w1.at(&[j, h]))
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect();
        let g: Vec<f64> = (0..c)
            .map(|j| sigmoid((0..c / 8).map(|h| hid[h] * w2.at(&[h, j])).sum()))
            .collect();
        for p in 0..6 {
            for j in 0..c {
                let idx = (i * 6 + p) * c + j;
                assert!((y.data()[idx] - x.data()[idx] * g[j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn resblock_g_identity_and_upsampling() {
    let mut r = rng(8);
    let x = Tensor::randn(vec![2, 4, 4, 8], &mut r);
    let z = Tensor::randn(vec![2, 3], &mut r);
    for kind in [ConvKind::Conv, ConvKind::GConv] {
        let mut store = ParamStore::new();
        let blk = ResBlockG::new(
            &mut store,
            "rb",
            8,
            8,
            3,
            false,
            kind,
            Init::Orthogonal,
            &mut r,
        );
        assert!(blk.skip.is_none());
        zero_all(&mut store, &[]);
        let y = eval(&mut store, Mode::Train, &x, Some(&z), |fw, x, z| {
            blk.forward(fw, x, z.unwrap())
        });
        assert_eq!(y, x);

        let mut store = ParamStore::new();
        let blk = ResBlockG::new(
            &mut store,
            "rb",
            8,
            4,
            3,
            true,
            kind,
            Init::Orthogonal,
            &mut r,
        );
        let y = eval(&mut store, Mode::Train, &x, Some(&z), |fw, x, z| {
            blk.forward(fw, x, z.unwrap())
        });
        assert_eq!(y.shape(), &[2, 8, 8, 4]);
    }
}

#[test]
fn resblock_d_identity_and_downsampling() {
    let mut r = rng(9);
    let x = Tensor::randn(vec![2, 4, 6, 4], &mut r);
    let mut store = ParamStore::new();
    let blk = ResBlockD::new(
        &mut store,
        "rb",
        4,
        4,
        false,
        false,
        false,
        Init::Orthogonal,
        &mut r,
    );
    assert!(blk.skip.is_none());
    zero_all(&mut store, &[]);
    let y = eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
        blk.forward(fw, x)
    });
    assert_eq!(y, x);

    for first in [false, true] {
        let mut store = ParamStore::new();
        let blk = ResBlockD::new(
            &mut store,
            "rb",
            4,
            8,
            true,
            first,
            true,
            Init::Orthogonal,
            &mut r,
        );
        let y = eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
            blk.forward(fw, x)
        });
        assert_eq!(y.shape(), &[2, 2, 3, 8]);
    }

    let odd = Tensor::randn(vec![1, 3, 4, 4], &mut r);
    let mut store = ParamStore::new();
    let blk = ResBlockD::new(
        &mut store,
        "rb",
        4,
        4,
        true,
        false,
        false,
        Init::Orthogonal,
        &mut r,
    );
    let mut tape = Tape::new();
    let mut fw = Forward::new(&mut tape, &mut store, Mode::Train);
    let xv = fw.tape.constant(odd);
    assert!(matches!(
        blk.forward(&mut fw, xv),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn resblock_d_convs_are_spectrally_bounded() {
    let mut r = rng(10);
    let mut store = ParamStore::new();
    let blk = ResBlockD::new(
        &mut store,
        "rb",
        4,
        6,
        true,
        false,
        true,
        Init::Scaled,
        &mut r,
    );
    // blow the raw weights up so the bound is not trivially met
    for e in store.entries_mut() {
        if e.name.ends_with(".k") {
            e.value = e.value.scale(7.0);
        }
    }
    let x = Tensor::randn(vec![2, 4, 4, 4], &mut r);
    for _ in 0..30 {
        eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
            blk.forward(fw, x)
        });
    }
    for conv in blk.convs() {
        let mut tape = Tape::new();
        let mut fw = Forward::new(&mut tape, &mut store, Mode::Eval);
        let k = conv.kernel(&mut fw).unwrap();
        let kt = fw.tape.value(k).clone();
        let n = conv.outputs;
        let sv = jacobi_singular_values(kt.data(), kt.len() / n, n);
        assert!(sv[0] <= 1.0 + 1e-4, "sigma {}", sv[0]);
    }
}

#[test]
fn spectral_normalization_examples() {
    let mut r = rng(11);
    let w = Tensor::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
    let mut st = SpectralState::init(&w, &mut r).unwrap();
    let wn = spectral_normalize(&w, &mut st, 50).unwrap();
    let want = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0 / 3.0]]).unwrap();
    assert!(wn.max_abs_diff(&want).unwrap() < 1e-12);

    let mut st = SpectralState::init_unchecked(2, 2, &mut r);
    assert!(matches!(
        power_iteration(&Tensor::zeros(vec![2, 2]), &mut st, 1),
        Err(Error::Normalization(_))
    ));
}

#[test]
fn spectral_normalization_against_jacobi_svd() {
    let mut r = rng(12);
    for (rows, cols) in [(4, 3), (3, 4), (6, 6)] {
        let w = Tensor::randn(vec![rows, cols], &mut r);
        let mut st = SpectralState::init(&w, &mut r).unwrap();
        let wn = spectral_normalize(&w, &mut st, 50).unwrap();
        let sv = jacobi_singular_values(wn.data(), rows, cols);
        assert!((sv[0] - 1.0).abs() < 1e-6, "{rows}x{cols}: {}", sv[0]);
    }
}

#[test]
fn spectral_dense_advances_only_in_training() {
    let mut r = rng(13);
    let mut store = ParamStore::new();
    let d = Dense::new(&mut store, "d", 3, 2, true, Init::Scaled, &mut r)
        .with_spectral_norm(&mut store, "d", &mut r);
    let u = store.find("d.sn_u").unwrap();
    let x = Tensor::randn(vec![2, 3], &mut r);
    let before = store.get(u).clone();
    eval(&mut store, Mode::Eval, &x, None, |fw, x, _| {
        d.forward(fw, x)
    });
    assert_eq!(store.get(u), &before);
    eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
        d.forward(fw, x)
    });
    assert_ne!(store.get(u), &before);
}

#[test]
fn conv_layer_matches_loop_oracle() {
    let mut r = rng(14);
    let mut store = ParamStore::new();
    let c = gconv_core::nn::Conv2d::new(&mut store, "c", 3, 3, 4, false, Init::Scaled, &mut r);
    let x = Tensor::randn(vec![2, 5, 4, 3], &mut r).map(|v| (3.0 * v).clamp(-10.0, 10.0));
    let k = store.get(c.k).clone();
    let y = eval(&mut store, Mode::Train, &x, None, |fw, x, _| {
        c.forward(fw, x)
    });
    assert!(y.max_abs_diff(&conv_same(&x, &k)).unwrap() < 1e-12);
}
