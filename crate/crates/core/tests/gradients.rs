mod common;

use gconv_core::gradcheck::suite::{check_layer, LAYERS};
use gconv_core::gradcheck::{grad_check, grad_check_with, GradCheck};
use gconv_core::nn::{gconv_forward_fused, GConvParams, GConvVars};
use gconv_core::train::{loss_g, LossKind};
use gconv_core::{Padding, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn square_at_three() {
    let err = grad_check(|t, v| Ok(t.square(v[0])), &[Tensor::scalar(3.0)]).unwrap();
    assert!(err < 1e-9);
}

#[test]
fn sigmoid_of_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::randn(vec![3, 3], &mut rng);
    let b = Tensor::randn(vec![3, 3], &mut rng);
    let err = grad_check(
        |t, v| {
            let p = t.matmul(v[0], v[1])?;
            let s = t.sigmoid(p);
            Ok(t.sum(s))
        },
        &[a, b],
    )
    .unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn gconv_with_hinge_loss_at_small_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = GConvParams::random(3, 3, 2, 3, 2, &mut rng);
    let x = Tensor::randn(vec![2, 4, 4, 2], &mut rng);
    let z = Tensor::randn(vec![2, 2], &mut rng);
    let proj = Tensor::randn(vec![2 * 4 * 4 * 3, 1], &mut rng).scale(0.1);
    let opts = GradCheck {
        step: 1e-6,
        ..GradCheck::default()
    };
    let res = grad_check_with(
        |t, v| {
            let vars = GConvVars {
                k: v[2],
                ws: v[3],
                wl: v[4],
            };
            let y = gconv_forward_fused(t, v[0], v[1], vars, Padding::Same)?;
            let flat = t.reshape(y, &[2, 4 * 4 * 3])?;
            let w = t.constant(Tensor::new(vec![4 * 4 * 3, 1], proj.data()[..48].to_vec())?);
            let scores = t.matmul(flat, w)?;
            loss_g(t, scores, LossKind::Hinge)
        },
        &[x, z, p.k, p.ws, p.wl],
        opts,
    )
    .unwrap();
    assert!(res.max_rel_error < 1e-5, "{res:?}");
}

#[test]
fn every_layer_over_twenty_cases() {
    for layer in LAYERS {
        for case in 0..20 {
            let r = check_layer(layer, 2024, case, GradCheck::default()).unwrap();
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
    }
}

#[test]
fn corrupted_backward_is_caught() {
    let bad = GradCheck {
        analytic_scale: 1.01,
        ..GradCheck::default()
    };
    let r = check_layer("gconv_fused", 1, 0, bad).unwrap();
    assert!(r.max_rel_error > 1e-3);
}

fn grads_of(f: impl Fn(&mut Tape, gconv_core::Var) -> gconv_core::Var, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let loss = f(&mut tape, v);
    tape.backward(loss).unwrap().get(v).unwrap().clone()
}

#[test]
fn backward_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::randn(vec![4, 3], &mut rng);
    let l1 = |t: &mut Tape, v| {
        let s = t.tanh(v);
        t.sum(s)
    };
    let l2 = |t: &mut Tape, v| {
        let s = t.square(v);
        t.sum(s)
    };
    let (a, b) = (1.7, -0.4);
    let combined = grads_of(
        |t, v| {
            let p = l1(t, v);
            let q = l2(t, v);
            let p = t.scale(p, a);
            let q = t.scale(q, b);
            t.add(p, q).unwrap()
        },
        &x,
    );
    let g1 = grads_of(l1, &x);
    let g2 = grads_of(l2, &x);
    for i in 0..x.len() {
        let want = a * g1.data()[i] + b * g2.data()[i];
        assert!((combined.data()[i] - want).abs() < 1e-10);
    }
}

#[test]
fn replaying_a_tape_is_bitwise_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = GConvParams::random(3, 3, 3, 4, 2, &mut rng);
    let x = Tensor::randn(vec![2, 5, 5, 3], &mut rng);
    let z = Tensor::randn(vec![2, 2], &mut rng);
    let mut tape = Tape::new();
    let vars = p.record(&mut tape);
    let xv = tape.leaf(x);
    let zv = tape.constant(z);
    let y = gconv_forward_fused(&mut tape, xv, zv, vars, Padding::Same).unwrap();
    let sq = tape.square(y);
    let loss = tape.sum(sq);
    let g1 = tape.backward(loss).unwrap();
    let g2 = tape.backward(loss).unwrap();
    for v in [xv, vars.k, vars.ws, vars.wl] {
        assert_eq!(g1.get(v), g2.get(v));
    }
}

#[test]
fn conv_matches_loop_oracle_for_both_paddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (kh, m, n) in [(1, 2, 3), (2, 3, 2), (3, 4, 5)] {
        let x = Tensor::randn(vec![2, 6, 5, m], &mut rng).map(|v| (4.0 * v).clamp(-10.0, 10.0));
        let k = Tensor::randn(vec![kh, kh, m, n], &mut rng).map(|v| (4.0 * v).clamp(-10.0, 10.0));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(k.clone());
        let same = tape.conv2d(xv, kv, 1, Padding::Same).unwrap();
        let valid = tape.conv2d(xv, kv, 1, Padding::Valid).unwrap();
        assert!(
            tape.value(same)
                .max_abs_diff(&common::conv_same(&x, &k))
                .unwrap()
                < 1e-12
        );
        assert!(
            tape.value(valid)
                .max_abs_diff(&common::conv_valid(&x, &k))
                .unwrap()
                < 1e-12
        );
    }
}
