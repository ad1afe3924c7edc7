//! Behavioral checks for the tensor engine: closed-form values, contract
//! errors, and the structural invariants of the reverse pass.

use owczsl::tensor::{Graph, TensorError};
use proptest::prelude::*;

fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len());
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!((a - e).abs() <= tol, "index {i}: {a} vs {e}");
    }
}

#[test]
fn matmul_identity_and_annihilator() {
    let mut g = Graph::new();
    let eye = g.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false).unwrap();
    let m = g.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], false).unwrap();
    let prod = g.matmul(eye, m).unwrap();
    assert_eq!(g.data(prod), &[1.0, 2.0, 3.0, 4.0]);

    let zeros = g.leaf(vec![0.0; 6], &[2, 3], false).unwrap();
    let any = g.leaf((0..12).map(|i| i as f64 - 3.0).collect(), &[3, 4], false).unwrap();
    let z = g.matmul(zeros, any).unwrap();
    assert_eq!(g.data(z), &[0.0; 8]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut g = Graph::new();
    let a = g.leaf(vec![0.0; 6], &[2, 3], false).unwrap();
    let b = g.leaf(vec![0.0; 8], &[2, 4], false).unwrap();
    assert!(matches!(g.matmul(a, b), Err(TensorError::Shape { .. })));
}

#[test]
fn softmax_symmetry_saturation_closed_form() {
    let mut g = Graph::new();
    let x = g.leaf(vec![0.0, 0.0, 0.0], &[1, 3], false).unwrap();
    let s = g.softmax(x, 1).unwrap();
    assert_close(g.data(s), &[1.0 / 3.0; 3], 1e-15);

    let big = g.leaf(vec![1e4, 0.0, 0.0], &[1, 3], false).unwrap();
    let s = g.softmax(big, 1).unwrap();
    assert!(g.data(s).iter().all(|v| v.is_finite()));
    assert_close(g.data(s), &[1.0, 0.0, 0.0], 1e-12);

    let logs = g.leaf(vec![1f64.ln(), 2f64.ln(), 3f64.ln()], &[1, 3], false).unwrap();
    let s = g.softmax(logs, 1).unwrap();
    assert_close(g.data(s), &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0], 1e-15);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..7, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let mut g = Graph::new();
        let x = g.leaf(data, &[rows, cols], false).unwrap();
        let s = g.softmax(x, 1).unwrap();
        for r in 0..rows {
            let sum: f64 = g.data(s)[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "row {} sums to {}", r, sum);
            prop_assert!(g.data(s)[r * cols..(r + 1) * cols].iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn layernorm_closed_forms() {
    let mut g = Graph::new();
    let gain = g.leaf(vec![1.0, 1.0], &[2], false).unwrap();
    let bias = g.leaf(vec![0.0, 0.0], &[2], false).unwrap();

    // constant row: zero variance maps to zero through eps
    let c = g.leaf(vec![5.0, 5.0], &[1, 2], false).unwrap();
    let out = g.layernorm(c, gain, bias, 1e-5).unwrap();
    assert_close(g.data(out), &[0.0, 0.0], 1e-12);

    // [1,-1]: mean 0, var 1, so xhat = x / sqrt(1 + eps)
    let x = g.leaf(vec![1.0, -1.0], &[1, 2], false).unwrap();
    let out = g.layernorm(x, gain, bias, 1e-5).unwrap();
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert_close(g.data(out), &[expect, -expect], 1e-15);

    // zero gain annihilates: output is the bias row
    let zero_gain = g.leaf(vec![0.0, 0.0], &[2], false).unwrap();
    let b = g.leaf(vec![0.25, -0.75], &[2], false).unwrap();
    let any = g.leaf(vec![3.0, 9.0], &[1, 2], false).unwrap();
    let out = g.layernorm(any, zero_gain, b, 1e-5).unwrap();
    assert_close(g.data(out), &[0.25, -0.75], 1e-15);
}

#[test]
fn cross_entropy_values() {
    let mut g = Graph::new();

    // one-hot logit at the target: loss ~ 0
    let hot = g.leaf(vec![1e4, 0.0, 0.0], &[1, 3], false).unwrap();
    let l = g.cross_entropy(hot, &[0], None).unwrap();
    assert!(g.data(l)[0].abs() < 1e-12);

    // uniform logits: ln(C)
    let uni = g.leaf(vec![0.0; 5], &[1, 5], false).unwrap();
    let l = g.cross_entropy(uni, &[3], None).unwrap();
    assert_close(g.data(l), &[5f64.ln()], 1e-15);

    // [1,2,3] target 0: -ln softmax_0 = ln(1 + e + e^2)
    let x = g.leaf(vec![1.0, 2.0, 3.0], &[1, 3], false).unwrap();
    let l = g.cross_entropy(x, &[0], None).unwrap();
    let expected = (1.0 + 1f64.exp() + 2f64.exp()).ln();
    assert_close(g.data(l), &[expected], 1e-14);
    assert!((g.data(l)[0] - 2.4076).abs() < 1e-4);
}

#[test]
fn cross_entropy_subset_restricts_classes() {
    let mut g = Graph::new();
    // restricted to classes {0, 2}, uniform over the subset: ln 2
    let x = g.leaf(vec![0.0, 100.0, 0.0], &[1, 3], false).unwrap();
    let l = g.cross_entropy(x, &[2], Some(&[0, 2])).unwrap();
    assert_close(g.data(l), &[2f64.ln()], 1e-14);

    // target outside the subset is rejected
    let err = g.cross_entropy(x, &[1], Some(&[0, 2])).unwrap_err();
    assert!(matches!(err, TensorError::InvalidTarget { target: 1 }));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.leaf(vec![3.0, -1.0, 2.0], &[3], true).unwrap();
    let l = g.sum_all(x).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_half_square_is_identity() {
    let mut g = Graph::new();
    let x = g.leaf(vec![3.0, -1.0, 2.0], &[3], true).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum_all(sq).unwrap();
    let l = g.scale(s, 0.5).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0, -1.0, 2.0]);
}

#[test]
fn backward_accumulates_over_fanout() {
    let mut g = Graph::new();
    let x = g.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    let s1 = g.sum_all(x).unwrap();
    let s2 = g.sum_all(x).unwrap();
    let l = g.add(s1, s2).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    let err = g.backward(x).unwrap_err();
    assert!(matches!(err, TensorError::Contract { .. }));
}

proptest! {
    /// <gather(E, idx), G> == <E, scatter_add(G, idx)>; the scatter side is
    /// what backward produces for the gather op.
    #[test]
    fn gather_scatter_adjoint(seed in any::<u64>(), rows in 2usize..8, d in 1usize..5, picks in 1usize..10) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let table: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let idx: Vec<usize> = (0..picks).map(|_| rng.gen_range(0..rows)).collect();
        let cotangent: Vec<f64> = (0..picks * d).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let mut g = Graph::new();
        let e = g.leaf(table.clone(), &[rows, d], true).unwrap();
        let picked = g.gather(e, &idx).unwrap();
        let cot = g.leaf(cotangent.clone(), &[picks, d], false).unwrap();
        let weighted = g.mul(picked, cot).unwrap();
        let l = g.sum_all(weighted).unwrap();

        let lhs = g.data(picked).iter().zip(&cotangent).map(|(a, b)| a * b).sum::<f64>();
        g.backward(l).unwrap();
        let scattered = g.grad(e).unwrap();
        let rhs = table.iter().zip(scattered).map(|(a, b)| a * b).sum::<f64>();
        prop_assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
    }
}

#[test]
fn graph_is_shareable_across_threads() {
    let mut g = Graph::new();
    let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], false).unwrap();
    let y = g.softmax(x, 1).unwrap();
    let g = std::sync::Arc::new(g);
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let g = g.clone();
            std::thread::spawn(move || g.data(y).iter().sum::<f64>())
        })
        .collect();
    for h in handles {
        assert!((h.join().unwrap() - 2.0).abs() < 1e-12);
    }
}
