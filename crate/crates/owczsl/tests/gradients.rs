//! Finite-difference checks for every differentiable op, against the central
//! numeric oracle in `tensor::gradcheck`. Each check rebuilds the graph from
//! perturbed leaf values, so the numeric route never touches the reverse pass
//! it is validating.

use owczsl::tensor::gradcheck::{max_rel_err, numeric_gradient, FD_STEP, FD_TOL};
use owczsl::tensor::{Graph, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Check d(scalar out)/d(each input) for a graph builder, at several random
/// draws. `build` receives leaves in the order of `shapes` and returns the
/// scalar loss.
fn check<F>(name: &str, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Graph, &[TensorId]) -> TensorId,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x9d5e);
    for round in 0..4 {
        let inputs: Vec<Vec<f64>> = shapes.iter().map(|s| randn(&mut rng, s.iter().product())).collect();
        let run = |values: &[Vec<f64>]| -> (Graph, Vec<TensorId>, TensorId) {
            let mut g = Graph::new();
            let ids: Vec<TensorId> = values
                .iter()
                .zip(shapes)
                .map(|(v, s)| g.leaf(v.clone(), s, true).unwrap())
                .collect();
            let loss = build(&mut g, &ids);
            (g, ids, loss)
        };
        let (mut g, ids, loss) = run(&inputs);
        g.backward(loss).unwrap();
        for (arg, id) in ids.iter().enumerate() {
            let analytic = g.grad(*id).unwrap_or(&[]).to_vec();
            if analytic.is_empty() {
                continue;
            }
            let numeric = numeric_gradient(
                |x| {
                    let mut vals = inputs.clone();
                    vals[arg] = x.to_vec();
                    let (g2, _, l2) = run(&vals);
                    g2.data(l2)[0]
                },
                &inputs[arg],
                FD_STEP,
            );
            let err = max_rel_err(&analytic, &numeric);
            assert!(
                err < FD_TOL,
                "{name}: arg {arg} round {round} rel err {err:.3e} >= {FD_TOL:.0e}"
            );
        }
    }
}

#[test]
fn matmul_2d() {
    check("matmul", &[&[3, 2], &[2, 3]], |g, ids| {
        let c = g.matmul(ids[0], ids[1]).unwrap();
        g.sum_all(c).unwrap()
    });
}

#[test]
fn matmul_leading_broadcast() {
    check("matmul3d", &[&[2, 3, 4], &[4, 2]], |g, ids| {
        let c = g.matmul(ids[0], ids[1]).unwrap();
        g.sum_all(c).unwrap()
    });
}

#[test]
fn bmm_batched() {
    check("bmm", &[&[2, 3, 2], &[2, 2, 4]], |g, ids| {
        let c = g.bmm(ids[0], ids[1]).unwrap();
        // square the outputs so both factors get non-trivial cotangents
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn add_same_and_suffix_broadcast() {
    check("add", &[&[2, 3], &[2, 3]], |g, ids| {
        let c = g.add(ids[0], ids[1]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("add_bias", &[&[2, 4, 3], &[3]], |g, ids| {
        let c = g.add(ids[0], ids[1]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("add_rows", &[&[2, 4, 3], &[4, 3]], |g, ids| {
        let c = g.add(ids[0], ids[1]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn mul_scale_sub() {
    check("mul", &[&[7], &[7]], |g, ids| {
        let c = g.mul(ids[0], ids[1]).unwrap();
        g.sum_all(c).unwrap()
    });
    check("scale", &[&[5]], |g, ids| {
        let c = g.scale(ids[0], -2.5).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("sub", &[&[5], &[5]], |g, ids| {
        let c = g.sub(ids[0], ids[1]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn concat_and_slice() {
    check("concat", &[&[2, 2, 3], &[2, 1, 3]], |g, ids| {
        let c = g.concat(&[ids[0], ids[1]], 1).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("slice", &[&[2, 5, 2]], |g, ids| {
        let c = g.slice(ids[0], 1, 1, 3).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("select", &[&[3, 4]], |g, ids| {
        let c = g.select(ids[0], 0, 2).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn gather_ops() {
    check("gather", &[&[5, 3]], |g, ids| {
        let c = g.gather(ids[0], &[0, 2, 2, 4]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("gather_per_row", &[&[3, 4]], |g, ids| {
        let c = g.gather_per_row(ids[0], &[0, 3, 1, 1, 2, 0], 2).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn softmax_axes() {
    check("softmax_last", &[&[3, 4]], |g, ids| {
        let c = g.softmax(ids[0], 1).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("softmax_mid", &[&[2, 3, 2]], |g, ids| {
        let c = g.softmax(ids[0], 1).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn layernorm_all_inputs() {
    check("layernorm", &[&[3, 4], &[4], &[4]], |g, ids| {
        let c = g.layernorm(ids[0], ids[1], ids[2], 1e-5).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn activations() {
    check("gelu", &[&[9]], |g, ids| {
        let c = g.gelu(ids[0]).unwrap();
        g.sum_all(c).unwrap()
    });
    check("sigmoid", &[&[9]], |g, ids| {
        let c = g.sigmoid(ids[0]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn shape_ops() {
    check("reshape", &[&[2, 6]], |g, ids| {
        let c = g.reshape(ids[0], &[3, 4]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("permute", &[&[2, 3, 4]], |g, ids| {
        let c = g.permute(ids[0], &[2, 0, 1]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("expand_leading", &[&[3, 2]], |g, ids| {
        let c = g.expand_leading(ids[0], 4).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn reductions() {
    check("mean_axis", &[&[3, 4, 2]], |g, ids| {
        let c = g.mean_axis(ids[0], 1).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("sum_axis", &[&[3, 4, 2]], |g, ids| {
        let c = g.sum_axis(ids[0], 2).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn outer_and_row_ops() {
    check("outer", &[&[2, 3], &[2, 4]], |g, ids| {
        let c = g.outer(ids[0], ids[1]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
    check("scale_rows", &[&[2, 3, 4], &[2, 3]], |g, ids| {
        let c = g.scale_rows(ids[0], ids[1]).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn l2_normalize_rows_away_from_zero() {
    // keep rows clear of the zero-norm singularity
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..4 {
        let base: Vec<f64> = (0..8).map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let run = |x: &[f64]| {
            let mut g = Graph::new();
            let a = g.leaf(x.to_vec(), &[2, 4], true).unwrap();
            let c = g.l2_normalize_rows(a).unwrap();
            let w = g.leaf((1..=8).map(|i| i as f64 / 4.0).collect(), &[2, 4], false).unwrap();
            let c2 = g.mul(c, w).unwrap();
            let l = g.sum_all(c2).unwrap();
            (g, a, l)
        };
        let (mut g, a, l) = run(&base);
        g.backward(l).unwrap();
        let analytic = g.grad(a).unwrap().to_vec();
        let numeric = numeric_gradient(
            |x| {
                let (g2, _, l2) = run(x);
                g2.data(l2)[0]
            },
            &base,
            FD_STEP,
        );
        assert!(max_rel_err(&analytic, &numeric) < FD_TOL);
    }
}

#[test]
fn sparse_compose_all_inputs() {
    check("sparse_compose", &[&[2, 5], &[2, 3], &[3, 2]], |g, ids| {
        let c = g.sparse_compose(ids[0], ids[1], ids[2], 2, 3).unwrap();
        let c2 = g.mul(c, c).unwrap();
        g.sum_all(c2).unwrap()
    });
}

#[test]
fn cross_entropy_plain_and_subset() {
    check("cross_entropy", &[&[3, 5]], |g, ids| {
        g.cross_entropy(ids[0], &[0, 4, 2], None).unwrap()
    });
    check("cross_entropy_subset", &[&[2, 6]], |g, ids| {
        g.cross_entropy(ids[0], &[1, 5], Some(&[1, 3, 5])).unwrap()
    });
}
