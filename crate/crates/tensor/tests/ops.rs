use std::rc::Rc;

use egoexo_tensor::{grad_check, AttnMask, Tape, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn matmul_identity_and_small_product() {
    let mut tape = Tape::<f64>::new();
    let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let out = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(out), tape.value(b));

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let c = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let out = tape.matmul(a, c).unwrap();
    assert_eq!(tape.value(out).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(TensorError::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn matmul_grad_of_sum_is_row_sums_of_b() {
    let a = rand_t(&[3, 4], 1);
    let b = rand_t(&[4, 2], 2);
    let mut tape = Tape::new();
    let va = tape.leaf(a.clone(), true);
    let vb = tape.leaf(b.clone(), false);
    let out = tape.matmul(va, vb).unwrap();
    let s = tape.sum(out);
    tape.backward(s).unwrap();
    let g = tape.grad(va).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expect: f64 = b.row(k).iter().sum();
            assert!((g[i * 4 + k] - expect).abs() < 1e-12);
        }
    }
    let err = grad_check(
        |tp, v| {
            let m = tp.matmul(v[0], v[1])?;
            Ok(tp.sum(m))
        },
        &[a, b],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    for &p in tape.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
    let x = tape.constant(t(&[2], &[1000.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    let d = tape.value(y).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert!((d[0] - 1.0).abs() < 1e-12 && d[1] < 1e-12);
    assert!(matches!(tape.softmax(x, 1), Err(TensorError::Axis { .. })));
}

#[test]
fn softmax_jacobian_matches_differences() {
    // Each output coordinate separately, weighted so the Jacobian is fully probed.
    for out_idx in 0..5 {
        let err = grad_check(
            move |tp, v| {
                let y = tp.softmax(v[0], 0)?;
                let mut w = vec![0.0; 5];
                w[out_idx] = 1.0;
                let wv = tp.constant(Tensor::from_f64(&[5], &w)?);
                let m = tp.mul(y, wv)?;
                Ok(tp.sum(m))
            },
            &[rand_t(&[5], 3)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn softmax_inner_axis_slices_sum_to_one() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(rand_t(&[2, 3, 4], 9));
    let y = tape.softmax(x, 1).unwrap();
    let d = tape.value(y).data();
    for o in 0..2 {
        for i in 0..4 {
            let s: f64 = (0..3).map(|j| d[(o * 3 + j) * 4 + i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(t(&[4], &[1.0; 4]));
    let b = tape.constant(t(&[4], &[0.0; 4]));
    let x = tape.constant(t(&[1, 4], &[3.0; 4]));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let g2 = tape.constant(t(&[2], &[1.0, 1.0]));
    let b2 = tape.constant(t(&[2], &[0.0, 0.0]));
    let x2 = tape.constant(t(&[1, 2], &[1.0, -1.0]));
    let y2 = tape.layer_norm(x2, g2, b2, 1e-12).unwrap();
    let d = tape.value(y2).data();
    assert!((d[0] - 1.0).abs() < 1e-9 && (d[1] + 1.0).abs() < 1e-9);

    assert!(matches!(tape.layer_norm(x2, g2, b2, 0.0), Err(TensorError::Param(_))));
    assert!(matches!(tape.layer_norm(x2, g2, b2, -1.0), Err(TensorError::Param(_))));
}

#[test]
fn layer_norm_gradient() {
    let err = grad_check(
        |tp, v| {
            let y = tp.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let w = tp.constant(rand_t(&[2, 8], 40));
            let m = tp.mul(y, w)?;
            Ok(tp.sum(m))
        },
        &[rand_t(&[2, 8], 4), rand_t(&[8], 5), rand_t(&[8], 6)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let mut logits = vec![-1e3; 3 * 4];
    let targets = [2usize, 0, 3];
    for (r, &c) in targets.iter().enumerate() {
        logits[r * 4 + c] = 1e3;
    }
    let l = tape.constant(t(&[3, 4], &logits));
    let loss = tape.cross_entropy(l, &targets, 99).unwrap();
    assert!(tape.value(loss).data()[0].abs() < 1e-12);

    let u = tape.constant(Tensor::zeros(&[5, 8]));
    let loss = tape.cross_entropy(u, &[1, 2, 3, 4, 5], 99).unwrap();
    assert!((tape.value(loss).data()[0] - 8f64.ln()).abs() < 1e-12);
    assert!((8f64.ln() - 2.0794).abs() < 1e-4);
}

#[test]
fn cross_entropy_matches_per_position_recompute() {
    let logits = rand_t(&[4, 10], 7);
    let ignore = 10;
    let targets = [3usize, ignore, 9, ignore];
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone(), true);
    let loss = tape.cross_entropy(l, &targets, ignore).unwrap();
    let mut total = 0.0;
    for (r, &tg) in targets.iter().enumerate() {
        if tg == ignore {
            continue;
        }
        let row = logits.row(r);
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        total += lse - row[tg];
    }
    assert!((tape.value(loss).data()[0] - total / 2.0).abs() < 1e-12);
    tape.backward(loss).unwrap();
    let g = tape.grad(l).unwrap();
    assert!(g[10..20].iter().chain(&g[30..40]).all(|&v| v == 0.0));
}

#[test]
fn cross_entropy_errors() {
    let mut tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::zeros(&[2, 4]));
    assert_eq!(tape.cross_entropy(l, &[7, 7], 7), Err(TensorError::EmptySupervision));
    assert!(matches!(tape.cross_entropy(l, &[1, 4], 7), Err(TensorError::Target { position: 1, .. })));
}

#[test]
fn backward_basics_and_accumulation() {
    let x = rand_t(&[3, 2], 11);
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let s = tape.sum(v);
    tape.backward(s).unwrap();
    assert!(tape.grad(v).unwrap().iter().all(|&g| g == 1.0));
    // second call accumulates
    tape.backward(s).unwrap();
    assert!(tape.grad(v).unwrap().iter().all(|&g| g == 2.0));
    tape.zero_grad();
    assert!(tape.grad(v).is_none());

    let sq = tape.mul(v, v).unwrap();
    let s2 = tape.sum(sq);
    tape.backward(s2).unwrap();
    for (g, x) in tape.grad(v).unwrap().iter().zip(x.data()) {
        assert!((g - 2.0 * x).abs() < 1e-12);
    }
    assert!(matches!(tape.backward(sq), Err(TensorError::NonScalar(_))));
}

#[test]
fn grad_absent_off_path() {
    let mut tape = Tape::new();
    let a = tape.leaf(rand_t(&[2, 2], 1), true);
    let b = tape.leaf(rand_t(&[2, 2], 2), true);
    let s = tape.sum(a);
    let _unused = tape.sum(b);
    tape.backward(s).unwrap();
    assert!(tape.grad(b).map_or(true, |g| g.iter().all(|&v| v == 0.0)));
}

#[test]
fn grad_check_trivial_cases() {
    let w = rand_t(&[6], 20);
    let lin = grad_check(
        move |tp, v| {
            let wv = tp.constant(w.clone());
            let m = tp.mul(v[0], wv)?;
            Ok(tp.sum(m))
        },
        &[rand_t(&[6], 21)],
        1e-5,
    )
    .unwrap();
    assert!(lin < 1e-8, "{lin}");

    let sm = grad_check(
        |tp, v| {
            let y = tp.softmax(v[0], 0)?;
            Ok(tp.sum(y))
        },
        &[rand_t(&[7], 22)],
        1e-5,
    )
    .unwrap();
    assert!(sm < 1e-6, "{sm}");
}

#[test]
fn grad_check_composed_pipeline() {
    let err = grad_check(
        |tp, v| {
            let h = tp.matmul(v[0], v[1])?;
            let n = tp.layer_norm(h, v[2], v[3], 1e-5)?;
            tp.cross_entropy(n, &[0, 5, 2], 5)
        },
        &[rand_t(&[3, 4], 30), rand_t(&[4, 6], 31), rand_t(&[6], 32), rand_t(&[6], 33)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn grad_check_rejects_bad_inputs() {
    let f = |tp: &mut Tape<f64>, v: &[egoexo_tensor::Var]| Ok(tp.sum(v[0]));
    assert!(matches!(grad_check(f, &[rand_t(&[2], 1)], 1e-2), Err(TensorError::Param(_))));
    let g = |tp: &mut Tape<f64>, v: &[egoexo_tensor::Var]| Ok(tp.scale(v[0], 2.0));
    assert!(matches!(grad_check(g, &[rand_t(&[2], 1)], 1e-5), Err(TensorError::Contract(_))));
}

#[test]
fn masked_attention_is_causal_and_matches_naive() {
    let (lq, d, heads) = (5, 8, 2);
    let q = rand_t(&[lq, d], 50);
    let k = rand_t(&[lq, d], 51);
    let v = rand_t(&[lq, d], 52);
    let mask = Rc::new(AttnMask::causal(lq));
    let mut tape = Tape::new();
    let (vq, vk, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = tape.attention(vq, vk, vv, heads, Some(&mask)).unwrap();
    let dh = d / heads;
    for h in 0..heads {
        for i in 0..lq {
            let scores: Vec<f64> = (0..=i)
                .map(|j| (0..dh).map(|c| q.data()[i * d + h * dh + c] * k.data()[j * d + h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
            for c in 0..dh {
                let expect: f64 = (0..=i).map(|j| (scores[j] - mx).exp() / z * v.data()[j * d + h * dh + c]).sum();
                assert!((tape.value(out).data()[i * d + h * dh + c] - expect).abs() < 1e-12);
            }
        }
    }
    let probs = tape.attention_probs(out).unwrap();
    for h in 0..heads {
        for i in 0..lq {
            for j in i + 1..lq {
                assert_eq!(probs[(h * lq + i) * lq + j], 0.0);
            }
        }
    }
}

#[test]
fn attention_gradient() {
    let mask = Rc::new(AttnMask::new(3, 4, vec![true, false, true, true, true, true, false, true, false, true, true, true]));
    let err = grad_check(
        move |tp, v| {
            let o = tp.attention(v[0], v[1], v[2], 2, Some(&mask))?;
            let w = tp.constant(rand_t(&[3, 4], 60));
            let m = tp.mul(o, w)?;
            Ok(tp.sum(m))
        },
        &[rand_t(&[3, 4], 61), rand_t(&[4, 4], 62), rand_t(&[4, 4], 63)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn structural_ops_gradient() {
    let err = grad_check(
        |tp, v| {
            let cat = tp.concat_rows(&[v[0], v[1]])?;
            let sl = tp.slice_rows(cat, 1, 3)?;
            let b = tp.add_row(sl, v[2])?;
            let g = tp.gelu(b);
            let pooled = tp.mean_rows(g)?;
            let e = tp.embedding(v[3], &[2, 0, 2])?;
            let e2 = tp.mean_rows(e)?;
            let diff = tp.sub(pooled, e2)?;
            let sc = tp.scale(diff, 0.7);
            let zero = tp.constant(Tensor::zeros(&[1, 3]));
            let m1 = tp.mse(sc, zero)?;
            let r = tp.reshape(v[1], &[6])?;
            let s = tp.sum(r);
            let sq = tp.mul(s, s)?;
            tp.add(m1, sq)
        },
        &[rand_t(&[2, 3], 70), rand_t(&[2, 3], 71), rand_t(&[3], 72), rand_t(&[4, 3], 73)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn matmul_nt_gradient() {
    let err = grad_check(
        |tp, v| {
            let m = tp.matmul_nt(v[0], v[1])?;
            let sq = tp.mul(m, m)?;
            Ok(tp.sum(sq))
        },
        &[rand_t(&[3, 5], 80), rand_t(&[4, 5], 81)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}
