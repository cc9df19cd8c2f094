use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;
use crate::graph::SparseMatrix;

/// Central-difference gradient oracle. Returns the largest relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` over every
/// input entry.
pub(crate) fn max_grad_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    const H: f64 = 1e-5;
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars).unwrap();
    let grads = loss.backward().unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |probe: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).unwrap().item().unwrap()
    };

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for k in 0..inputs.len() {
        for j in 0..inputs[k].len() {
            let orig = inputs[k].data()[j];
            probe[k].data_mut()[j] = orig + H;
            let up = eval(&probe);
            probe[k].data_mut()[j] = orig - H;
            let down = eval(&probe);
            probe[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[k].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn random_sparse(rng: &mut ChaCha8Rng, n: usize, density: f64) -> SparseMatrix {
    let mut trip = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.random_bool(density) {
                trip.push((i, j, rng.random_range(-2.0..2.0)));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, trip).unwrap()
}

#[test]
fn matmul_identity_and_hand_cases() {
    let tape = Tape::new();
    let i2 = tape.constant(Tensor::identity(2));
    let m = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
    assert_eq!(*i2.matmul(m).unwrap().value(), *m.value());

    let a = tape.constant(Tensor::from_rows(&[[1.0, 2.0]]));
    let b = tape.constant(Tensor::column(vec![3.0, 4.0]));
    assert_eq!(a.matmul(b).unwrap().item().unwrap(), 11.0);

    let err = a.matmul(a).unwrap_err().to_string();
    assert!(err.contains("[1, 2]"), "{err}");
}

#[test]
fn spmm_matches_densified_matmul_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = Arc::new(random_sparse(&mut rng, 50, 0.1));
    let d = uniform(&mut rng, 50, 7, -2.0, 2.0);
    let tape = Tape::new();
    let dv = tape.constant(d);
    let sparse = dv.spmm_by(&s).unwrap();
    let dense = tape.constant(s.densify()).matmul(dv).unwrap();
    assert!(sparse.value().bitwise_eq(&dense.value()));
}

#[test]
fn spmm_shape_mismatch() {
    let tape = Tape::new();
    let s = Arc::new(SparseMatrix::identity(3));
    assert!(tape.constant(Tensor::zeros(4, 2)).spmm_by(&s).is_err());
}

#[test]
fn elementwise_examples() {
    let tape = Tape::new();
    let z = tape.param(Tensor::scalar(0.0));
    let s = z.sigmoid();
    assert_eq!(s.item().unwrap(), 0.5);
    let g = s.sum().unwrap().backward().unwrap();
    assert!((g.wrt(z).item().unwrap() - 0.25).abs() < 1e-15);

    let r = tape.constant(Tensor::row(vec![-3.0, 3.0])).relu();
    assert_eq!(r.value().data(), &[0.0, 3.0]);

    let bad = tape.constant(Tensor::row(vec![1.0, 0.0]));
    assert!(matches!(bad.log(), Err(crate::Error::Domain { .. })));

    let a = tape.constant(Tensor::zeros(2, 2));
    let b = tape.constant(Tensor::zeros(2, 3));
    assert!(a.add(b).is_err());
    assert!(a.add_row_bias(tape.constant(Tensor::zeros(1, 3))).is_err());
}

#[test]
fn reduction_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]));
    assert_eq!(x.frobenius_sq_rows().unwrap().value().data(), &[1.0, 0.0]);
    assert_eq!(
        tape.constant(Tensor::row(vec![2.0, 4.0]))
            .mean()
            .unwrap()
            .item()
            .unwrap(),
        3.0
    );
    assert!(tape.constant(Tensor::zeros(0, 3)).sum().is_err());
    assert!(tape
        .constant(Tensor::zeros(0, 3))
        .frobenius_sq_rows()
        .is_err());

    let p = tape.param(Tensor::from_rows(&[[1.0, -2.0], [0.5, 3.0]]));
    let g = p.sum().unwrap().backward().unwrap();
    assert_eq!(g.wrt(p), Tensor::ones(2, 2));
}

#[test]
fn concat_examples() {
    let tape = Tape::new();
    let a = tape.param(Tensor::from_rows(&[[1.0]]));
    let b = tape.param(Tensor::from_rows(&[[2.0]]));
    assert_eq!(a.concat_cols(b).unwrap().value().data(), &[1.0, 2.0]);

    let p = tape.param(Tensor::zeros(3, 2));
    let q = tape.param(Tensor::zeros(3, 5));
    let c = p.concat_cols(q).unwrap();
    assert_eq!(c.shape(), [3, 7]);
    let g = c.sum().unwrap().backward().unwrap();
    assert_eq!(g.wrt(p), Tensor::ones(3, 2));
    assert_eq!(g.wrt(q), Tensor::ones(3, 5));
    assert!(p.concat_cols(tape.param(Tensor::zeros(2, 1))).is_err());
}

#[test]
fn permute_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::column(vec![10.0, 20.0]));
    assert_eq!(
        x.permute_rows(&[0, 1]).unwrap().value().data(),
        &[10.0, 20.0]
    );
    assert_eq!(
        x.permute_rows(&[1, 0]).unwrap().value().data(),
        &[20.0, 10.0]
    );
    assert!(matches!(
        x.permute_rows(&[0, 0]),
        Err(crate::Error::Permutation(_))
    ));
    assert!(matches!(
        x.permute_rows(&[0, 2]),
        Err(crate::Error::Permutation(_))
    ));
    assert!(x.permute_rows(&[0]).is_err());
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.param(Tensor::column(vec![1.0, 2.0, 3.0]));
    let g = x.sum().unwrap().backward().unwrap();
    assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);

    let tape = Tape::new();
    let x = tape.param(Tensor::column(vec![1.0, 2.0]));
    let unused = tape.param(Tensor::zeros(2, 2));
    let g = x.hadamard(x).unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    assert_eq!(g.get(unused), Some(&Tensor::zeros(2, 2)));

    assert!(x.backward().is_err());
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = uniform(&mut rng, 6, 4, -2.0, 2.0);
    let w = uniform(&mut rng, 4, 3, -2.0, 2.0);
    let run = || {
        let tape = Tape::new();
        let (xv, wv) = (tape.param(x.clone()), tape.param(w.clone()));
        let loss = xv.matmul(wv).unwrap().sigmoid().gram().sum().unwrap();
        let g = loss.backward().unwrap();
        (g.wrt(xv), g.wrt(wv))
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    assert!(a1.bitwise_eq(&a2) && b1.bitwise_eq(&b2));
}

#[test]
fn gradient_matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let a = uniform(&mut rng, 3, 4, -2.0, 2.0);
        let b = uniform(&mut rng, 4, 2, -2.0, 2.0);
        let err = max_grad_error(&[a, b], |_, v| v[0].matmul(v[1])?.sum());
        assert!(err < 1e-6, "matmul grad error {err}");
    }
}

#[test]
fn gradient_three_layer_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let adj = Arc::new(random_sparse(&mut rng, 6, 0.4));
    for _ in 0..20 {
        let x = uniform(&mut rng, 6, 3, -2.0, 2.0);
        let w1 = uniform(&mut rng, 3, 4, -2.0, 2.0);
        let b1 = uniform(&mut rng, 1, 4, -2.0, 2.0);
        let w2 = uniform(&mut rng, 4, 4, -2.0, 2.0);
        let w3 = uniform(&mut rng, 4, 2, -2.0, 2.0);
        let adj = Arc::clone(&adj);
        let err = max_grad_error(&[x, w1, b1, w2, w3], move |_, v| {
            let h1 = v[0].spmm_by(&adj)?.matmul(v[1])?.add_row_bias(v[2])?.relu();
            let h2 = h1.matmul(v[3])?.sigmoid();
            let out = h2.matmul(v[4])?.exp();
            out.square().mean()
        });
        assert!(err < 1e-4, "composite grad error {err}");
    }
}

#[test]
fn gradient_every_elementwise_and_reduction_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    type Case = (
        &'static str,
        for<'a, 't> fn(&'a [Var<'t>]) -> Result<Var<'t>>,
    );
    let cases: Vec<Case> = vec![
        ("add", |v| v[0].add(v[1])?.square().sum()),
        ("sub", |v| v[0].sub(v[1])?.square().sum()),
        ("hadamard", |v| v[0].hadamard(v[1])?.sum()),
        ("scale", |v| v[0].scale(-1.7).square().sum()),
        ("add_scalar", |v| v[0].add_scalar(0.3).square().sum()),
        ("sigmoid", |v| v[0].sigmoid().hadamard(v[1])?.sum()),
        ("relu", |v| v[0].relu().hadamard(v[1])?.sum()),
        ("exp", |v| v[0].exp().hadamard(v[1])?.sum()),
        ("log", |v| {
            v[0].square().add_scalar(0.5).log()?.hadamard(v[1])?.sum()
        }),
        ("square", |v| v[0].square().hadamard(v[1])?.sum()),
        ("clamp", |v| v[0].clamp(-1.0, 1.0).hadamard(v[1])?.sum()),
        ("mean", |v| v[0].hadamard(v[1])?.mean()),
        ("row_sum", |v| v[0].row_sum()?.square().sum()),
        ("frobenius_sq_rows", |v| {
            v[0].sub(v[1])?.frobenius_sq_rows()?.sum()
        }),
        ("concat_cols", |v| v[0].concat_cols(v[1])?.square().mean()),
        ("permute_rows", |v| {
            v[0].permute_rows(&[2, 0, 3, 1])?.hadamard(v[1])?.sum()
        }),
        ("gram", |v| v[0].gram().hadamard(v[1].gram())?.sum()),
        ("zscore", |v| {
            v[0].row_sum()?.zscore()?.hadamard(v[1].row_sum()?)?.sum()
        }),
    ];
    for (name, f) in cases {
        for _ in 0..20 {
            let a = uniform(&mut rng, 4, 3, -2.0, 2.0);
            let b = uniform(&mut rng, 4, 3, -2.0, 2.0);
            let err = max_grad_error(&[a, b], |_, v| f(v));
            assert!(err < 1e-4, "{name}: grad error {err}");
        }
    }
}

#[test]
fn gradient_bias_and_fused_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let x = uniform(&mut rng, 5, 3, -2.0, 2.0);
        let b = uniform(&mut rng, 1, 3, -2.0, 2.0);
        let err = max_grad_error(&[x, b], |_, v| v[0].add_row_bias(v[1])?.sigmoid().sum());
        assert!(err < 1e-4, "add_row_bias: {err}");

        let l = uniform(&mut rng, 5, 3, -4.0, 4.0);
        let t = Arc::new(uniform(&mut rng, 5, 3, 0.0, 1.0).map(f64::round));
        let err = max_grad_error(&[l], |_, v| v[0].bce_with_logits(&t));
        assert!(err < 1e-4, "bce_with_logits: {err}");

        let w = Arc::new(uniform(&mut rng, 6, 1, -2.0, 2.0));
        let o = uniform(&mut rng, 6, 1, -2.0, 2.0);
        let p = uniform(&mut rng, 6, 1, -2.0, 2.0);
        let err = max_grad_error(std::slice::from_ref(&o), |_, v| v[0].square().weighted_sum(&w));
        assert!(err < 1e-4, "weighted_sum: {err}");
        let err = max_grad_error(&[o.clone(), p.clone()], |_, v| v[0].abs_pearson(v[1]));
        assert!(err < 1e-4, "abs_pearson: {err}");
        let err = max_grad_error(&[o, p], |_, v| v[0].abs_cosine(v[1]));
        assert!(err < 1e-4, "abs_cosine: {err}");
    }
}

#[test]
fn pearson_and_cosine_guards() {
    let tape = Tape::new();
    let c = tape.param(Tensor::column(vec![2.0, 2.0, 2.0]));
    let v = tape.param(Tensor::column(vec![1.0, 2.0, 3.0]));
    let r = c.abs_pearson(v).unwrap();
    assert_eq!(r.item().unwrap(), 0.0);
    let g = r.backward().unwrap();
    assert_eq!(g.wrt(v), Tensor::zeros(3, 1));
    let z = tape.param(Tensor::zeros(3, 1));
    assert_eq!(z.abs_cosine(v).unwrap().item().unwrap(), 0.0);
    let one = tape.param(Tensor::column(vec![1.0]));
    assert!(one.abs_pearson(one).is_err());
}

proptest! {
    #[test]
    fn prop_spmm_equals_dense(seed in any::<u64>(), n in 1usize..20, cols in 1usize..5, density in 0.0f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_sparse(&mut rng, n, density);
        let d = uniform(&mut rng, n, cols, -2.0, 2.0);
        let sparse = s.spmm(&d).unwrap();
        let dense = kernels::matmul(&s.densify(), &d);
        prop_assert!(sparse.bitwise_eq(&dense));
    }

    #[test]
    fn prop_permute_inverse_roundtrip(seed in any::<u64>(), n in 1usize..30) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let x = uniform(&mut rng, n, 3, -2.0, 2.0);
        let tape = Tape::new();
        let back = tape
            .constant(x.clone())
            .permute_rows(&perm)
            .unwrap()
            .permute_rows(&invert_permutation(&perm))
            .unwrap();
        prop_assert!(back.value().bitwise_eq(&x));
    }
}
