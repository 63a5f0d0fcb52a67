mod common;

use std::sync::Arc;

use common::*;
use nalgebra::{dmatrix, DMatrix};
use proptest::prelude::*;
use tpdv_core::numerics::mtx::{read_mtx, write_mtx};
use tpdv_core::numerics::{
    bregman_divergence, contraction_defect, e_map, estimate_extreme_eigs, weighted_inner, DenseSpd, DiagonalOperator,
    EigMode, FnOracle, GradientOracle, QuadraticOracle, SparseMatrix,
};

#[test]
fn weighted_inner_diag_metric() {
    let m = DiagonalOperator::new(vec![2.0, 5.0]).unwrap();
    assert_eq!(weighted_inner(&m, &[1.0, 1.0], &[1.0, -1.0]).unwrap(), 2.0 - 5.0);
}

#[test]
fn bregman_of_quartic() {
    let f = FnOracle::new(2, |x| vec![4.0 * x[0].powi(3), 2.0 * x[1]]).with_value(|x| x[0].powi(4) + x[1] * x[1]);
    // f(1,1) − f(0,0) − ⟨∇f(0,0), (1,1)⟩ = 2
    assert_eq!(bregman_divergence(&f, &[1.0, 1.0], &[0.0, 0.0]).unwrap(), 2.0);
}

#[test]
fn e_map_dense_example() {
    let m = DiagonalOperator::new(vec![1.0, 1.0]).unwrap();
    let f = QuadraticOracle::pure(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 3.0])).unwrap();
    let e = e_map(&m, |xi| f.conj_grad(xi), &[3.0, 3.0]).unwrap();
    // ξ − A⁻¹ξ = (3 − 3, 3 − 1)
    assert!((e[0] - 0.0).abs() < 1e-15 && (e[1] - 2.0).abs() < 1e-15);
}

#[test]
fn extreme_eigs_of_small_pencil() {
    let a = dmatrix![2.0, 1.0; 1.0, 2.0];
    let d = dmatrix![1.0, 0.0; 0.0, 2.0];
    let expect = pencil_eigs(&a, &d);
    // det(A − λD) = 2λ² − 6λ + 3
    let disc = (36.0_f64 - 24.0).sqrt();
    assert!((expect[0] - (6.0 - disc) / 4.0).abs() < 1e-14);
    let pair = estimate_extreme_eigs(&DenseSpd::new(a).unwrap(), &DenseSpd::new(d).unwrap(), EigMode::Dense).unwrap();
    assert!((pair.lambda_min - expect[0]).abs() < 1e-13);
    assert!((pair.lambda_max - expect[1]).abs() < 1e-13);
}

#[test]
fn iterative_eigs_track_dense() {
    let mut r = rng(11);
    let a = random_spd(&mut r, 30, 1.0, 50.0);
    let d = random_spd(&mut r, 30, 1.0, 3.0);
    let expect = pencil_eigs(&a, &d);
    let (a, d) = (DenseSpd::new(a).unwrap(), DenseSpd::new(d).unwrap());
    let pair = estimate_extreme_eigs(&a, &d, EigMode::Iterative).unwrap();
    assert!((pair.lambda_min / expect[0] - 1.0).abs() < 1e-2);
    assert!((pair.lambda_max / expect[29] - 1.0).abs() < 1e-2);
}

#[test]
fn contraction_ratio_for_diag_08_12() {
    let f = QuadraticOracle::pure(DMatrix::from_diagonal(&nalgebra::dvector![0.8, 1.2])).unwrap();
    let m = DiagonalOperator::new(vec![1.0, 1.0]).unwrap();
    let mut r = rng(5);
    for _ in 0..1000 {
        let (u1, u2) = (uniform_vec(&mut r, 2), uniform_vec(&mut r, 2));
        let d = contraction_defect(&f, &m, &u1, &u2).unwrap();
        assert!((d.bound - 0.375).abs() < 1e-15);
        assert!(d.ratio() <= 0.375 + 1e-10);
    }
}

#[test]
fn bregman_sandwich_on_random_quadratics() {
    let mut r = rng(21);
    for _ in 0..5 {
        let a = random_spd(&mut r, 6, 0.3, 20.0);
        let metric = random_spd(&mut r, 6, 0.5, 2.0);
        let f = QuadraticOracle::new(a.clone(), uniform_vec(&mut r, 6)).unwrap();
        let mop = DenseSpd::new(metric.clone()).unwrap();
        let pair = estimate_extreme_eigs(f.hessian_operator(), &mop, EigMode::Dense).unwrap();
        for _ in 0..1000 {
            let (u, v) = (uniform_vec(&mut r, 6), uniform_vec(&mut r, 6));
            let dg = sub(&f.grad(&u), &f.grad(&v));
            let g2 = quad_inv(&metric, &dg);
            let d = bregman_divergence(&f, &u, &v).unwrap();
            let tol = 1e-12 * g2.max(1e-300);
            assert!(g2 / (2.0 * pair.lambda_max) <= d + tol);
            assert!(d <= g2 / (2.0 * pair.lambda_min) + tol);
        }
    }
}

#[test]
fn conjugate_pencil_inverts_bounds() {
    let mut r = rng(8);
    for _ in 0..5 {
        let a = random_spd(&mut r, 7, 0.2, 30.0);
        let m = random_spd(&mut r, 7, 0.5, 4.0);
        let primal = estimate_extreme_eigs(&DenseSpd::new(a.clone()).unwrap(), &DenseSpd::new(m.clone()).unwrap(), EigMode::Dense)
            .unwrap();
        let ainv = a.try_inverse().unwrap();
        let minv = m.try_inverse().unwrap();
        let dual = estimate_extreme_eigs(
            &DenseSpd::new((&ainv + ainv.transpose()) * 0.5).unwrap(),
            &DenseSpd::new((&minv + minv.transpose()) * 0.5).unwrap(),
            EigMode::Dense,
        )
        .unwrap();
        assert!((dual.lambda_min - 1.0 / primal.lambda_max).abs() < 1e-10 * dual.lambda_max);
        assert!((dual.lambda_max - 1.0 / primal.lambda_min).abs() < 1e-10 * dual.lambda_max);
    }
}

#[test]
fn quadratic_gradient_matches_finite_differences() {
    let mut r = rng(3);
    let f: Arc<dyn GradientOracle> = Arc::new(QuadraticOracle::new(random_spd(&mut r, 5, 1.0, 4.0), uniform_vec(&mut r, 5)).unwrap());
    let err = tpdv_core::numerics::gradient_check(f.as_ref(), &uniform_vec(&mut r, 5)).unwrap();
    assert!(err < 1e-8);
}

fn sparse_strategy() -> impl Strategy<Value = SparseMatrix> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
        prop::collection::vec((0..r, 0..c, -5.0f64..5.0), 0..20)
            .prop_map(move |t| SparseMatrix::from_triplets(r, c, &t).unwrap())
    })
}

proptest! {
    #[test]
    fn transpose_is_an_involution(m in sparse_strategy()) {
        prop_assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn mtx_round_trip(m in sparse_strategy()) {
        let mut buf = Vec::new();
        write_mtx(&m, &mut buf).unwrap();
        let back = read_mtx(std::io::Cursor::new(buf)).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn matvec_matches_dense(m in sparse_strategy(), seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = uniform_vec(&mut r, m.n_cols());
        let dense = mv(&m.to_dense(), &x);
        let sparse = m.matvec(&x);
        for (a, b) in dense.iter().zip(&sparse) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
