use pdftime_core::selftest;
use pdftime_core::tensor::tape::Tape;
use pdftime_core::tensor::{ops, Tensor};

fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

#[test]
fn matmul_hand_example() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.leaf(&Tensor::from_f64_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.leaf(&Tensor::from_f64_vec(vec![2, 1], vec![1.0, 1.0]).unwrap());
    let y = tape.matmul(a, b, false, false).unwrap();
    assert_eq!(tape.shape(y), &[2, 1]);
    assert_eq!(tape.value_f64(y), vec![3.0, 7.0]);
}

#[test]
fn softmax_uniform_rows() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(&Tensor::from_f64_vec(vec![3], vec![0.0, 0.0, 0.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    for &v in tape.value_f64(y) {
        assert_close(v, 1.0 / 3.0, 1e-12, "uniform softmax");
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let x = selftest::rand_tensor(&mut rng, vec![5, 9]);
    let mut tape: Tape<f32> = Tape::new();
    let xid = tape.leaf(&x);
    let y = tape.softmax(xid, 1).unwrap();
    let v = tape.value_f64(y);
    for row in v.chunks(9) {
        assert_close(row.iter().sum::<f64>(), 1.0, 1e-6, "softmax row sum");
    }
}

#[test]
fn dft_inversion_spec_vector() {
    let x = Tensor::<f64>::from_f64_vec(vec![1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
    let (re, im) = ops::rfft(&x).unwrap();
    assert_eq!(re.shape(), &[1, 3]);
    let back = ops::irfft(&re, &im, 4).unwrap();
    for (a, b) in x.data().iter().zip(back.data()) {
        assert_close(*a, *b, 1e-6, "irfft(rfft(x))");
    }
}

#[test]
fn lse_reduce_examples_and_errors() {
    assert_close(ops::lse_reduce(&[0.5], 0.1).unwrap(), 5.0, 1e-12, "single-term");
    assert_close(
        ops::lse_reduce(&[0.8, 0.8], 1.0).unwrap(),
        0.8 + std::f64::consts::LN_2,
        1e-12,
        "two equal terms",
    );
    let dom = ops::lse_reduce(&[1.0, -1.0], 0.07).unwrap();
    assert!(dom >= 1.0 / 0.07);
    assert_close(dom, 1.0 / 0.07, 1e-12, "stabilized dominant term");

    assert!(ops::lse_reduce(&[], 1.0).is_err());
    assert!(ops::lse_reduce(&[1.0], 0.0).is_err());
    assert!(ops::lse_reduce(&[1.0], -2.0).is_err());
}

#[test]
fn lse_shift_and_permutation_identities() {
    let v = [0.3, -1.2, 0.9, 0.05];
    let t = 0.25;
    let base = ops::lse_reduce(&v, t).unwrap();
    let shifted = ops::lse_reduce(&v.map(|x| x + 2.5), t).unwrap();
    assert_close(shifted, base + 2.5 / t, 1e-9, "shift identity");
    let permuted = ops::lse_reduce(&[0.9, 0.05, 0.3, -1.2], t).unwrap();
    assert_close(permuted, base, 1e-12, "permutation invariance");
    // max sandwich
    let m = 0.9 / t;
    assert!(base >= m && base <= m + (v.len() as f64).ln());
}

#[test]
fn backward_square_and_lse_gradients() {
    // d(x^2)/dx at x = 3 is 6
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(&Tensor::from_f64_vec(vec![1], vec![3.0]).unwrap().with_grad());
    let y = tape.mul(x, x).unwrap();
    let grads = tape.backward(y).unwrap();
    assert_close(grads.get(x).unwrap()[0], 6.0, 1e-12, "d(x^2)/dx");

    // gradient of lse(v, T=1) is softmax(v)
    let v = Tensor::<f64>::from_f64_vec(vec![1, 4], vec![0.4, -0.3, 1.1, 0.0]).unwrap().with_grad();
    let mut tape: Tape<f64> = Tape::new();
    let vid = tape.leaf(&v);
    let lse = tape.lse_last_axis(vid, 1.0).unwrap();
    let grads = tape.backward(lse).unwrap();
    let mut sm = v.to_f64_vec();
    ops::softmax_slice(&mut sm);
    for (g, s) in grads.get(vid).unwrap().iter().zip(&sm) {
        assert_close(*g, *s, 1e-12, "lse gradient equals softmax");
    }
}

#[test]
fn masked_dft_identity_chain_gradient() {
    // loss = sum(irfft(ones ⊙ rfft(x))) has gradient exactly one everywhere
    let l = 16;
    let x = Tensor::<f64>::from_f64_vec(
        vec![1, 1, l],
        (0..l).map(|i| (i as f64 * 0.7).sin()).collect(),
    )
    .unwrap()
    .with_grad();
    let mut tape: Tape<f64> = Tape::new();
    let xid = tape.leaf(&x);
    let ones = tape.constant_f64(vec![1, l / 2 + 1], vec![1.0; l / 2 + 1]).unwrap();
    let y = tape.frequency_filter(xid, ones).unwrap();
    let loss = tape.sum_all(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    for g in grads.get(xid).unwrap() {
        assert_close(*g, 1.0, 1e-9, "identity-mask chain gradient");
    }
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(&Tensor::from_f64_vec(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    let y = tape.relu(x).unwrap();
    assert!(tape.backward(y).is_err());
}

#[test]
fn shape_mismatch_errors_name_operation() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.leaf(&Tensor::zeros(vec![2, 3]));
    let b = tape.leaf(&Tensor::zeros(vec![3, 2]));
    let err = tape.add(a, b).unwrap_err().to_string();
    assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");

    let err = tape.matmul(a, a, false, false).unwrap_err().to_string();
    assert!(err.contains("matmul"), "{err}");
}

#[test]
fn nan_production_is_an_error() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.leaf(&Tensor::from_f64_vec(vec![1], vec![f64::MAX]).unwrap());
    // overflow to +inf must surface as a numeric failure
    let err = tape.mul(a, a);
    assert!(matches!(err, Err(pdftime_core::Error::NumericFailure { .. })));
}

#[test]
fn finite_difference_suite_all_ops() {
    let results = selftest::gradient_checks(10);
    let (passed, total) = selftest::summarize(&results);
    for r in &results {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
    assert_eq!(passed, total);
}

#[test]
fn dft_and_lse_identity_suite() {
    for r in selftest::numeric_identity_checks() {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}

#[test]
fn finite_diff_quadratic_is_tight() {
    use pdftime_core::tensor::fd::finite_diff_check;
    let x = Tensor::<f64>::from_f64_vec(vec![1], vec![2.0]).unwrap().with_grad();
    let report = finite_diff_check(
        &|tape: &mut Tape<f64>, ids: &[pdftime_core::tensor::tape::NodeId]| {
            tape.mul(ids[0], ids[0])
        },
        &[x],
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "quadratic FD error {}", report.max_rel_error);
}
