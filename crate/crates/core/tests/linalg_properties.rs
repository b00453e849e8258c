use proptest::prelude::*;
use tsdl_core::linalg::{self, PinvBranch};
use tsdl_core::verification::check_lemma_identity;
use tsdl_core::{Matrix, Rng64};

fn random_matrix(rows: usize, cols: usize, rank: Option<usize>, seed: u64) -> Matrix {
    let mut rng = Rng64::seed(seed);
    match rank {
        Some(r) => rng.normal_matrix(rows, r).matmul(&rng.normal_matrix(r, cols)).unwrap(),
        None => rng.normal_matrix(rows, cols),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pseudoinverse_branches_agree(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>(), big in any::<bool>()) {
        let lambda = if big { 0.1 } else { 1e-3 };
        let a = random_matrix(rows, cols, None, seed);
        let wide = linalg::reg_pseudoinverse_with(&a, lambda, PinvBranch::Wide).unwrap();
        let tall = linalg::reg_pseudoinverse_with(&a, lambda, PinvBranch::Tall).unwrap();
        prop_assert!(wide.relative_distance(&tall, 1e-300) <= 1e-9);
    }

    #[test]
    fn lemma_identity_holds(rows in 1usize..10, cols in 1usize..10, rank in 0usize..4, seed in any::<u64>(), big in any::<bool>()) {
        let lambda = if big { 0.1 } else { 1e-3 };
        let deficient = rank > 0 && rank < rows.min(cols);
        let a = random_matrix(rows, cols, deficient.then_some(rank), seed);
        let r = check_lemma_identity(&a, lambda).unwrap();
        prop_assert!(r <= 1e-8 * (1.0 + a.frobenius_norm()), "residual {}", r);
    }

    #[test]
    fn moore_penrose_conditions(rows in 1usize..9, cols in 1usize..9, rank in 0usize..4, seed in any::<u64>()) {
        let deficient = rank > 0 && rank < rows.min(cols);
        let a = random_matrix(rows, cols, deficient.then_some(rank), seed);
        let p = linalg::moore_penrose_pinv(&a);
        let tol = 1e-9 * (1.0 + a.frobenius_norm() * a.frobenius_norm());
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        prop_assert!(apa.sub(&a).unwrap().max_abs() <= tol);
        let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
        prop_assert!(pap.sub(&p).unwrap().max_abs() <= tol * (1.0 + p.max_abs() * p.max_abs()));
        let ap = a.matmul(&p).unwrap();
        prop_assert!(ap.sub(&ap.transpose()).unwrap().max_abs() <= tol);
        let pa = p.matmul(&a).unwrap();
        prop_assert!(pa.sub(&pa.transpose()).unwrap().max_abs() <= tol);
    }

    #[test]
    fn regularised_pseudoinverse_tends_to_moore_penrose(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        let a = random_matrix(rows, cols, None, seed);
        let smin = *linalg::svd(&a).s.iter().min_by(|x, y| x.total_cmp(y)).unwrap();
        prop_assume!(smin > 0.05);
        let p = linalg::moore_penrose_pinv(&a);
        let d = linalg::reg_pseudoinverse(&a, 1e-9).unwrap();
        prop_assert!(d.relative_distance(&p, 1e-12) < 1e-5);
    }

    #[test]
    fn spd_solve_residual(n in 1usize..10, seed in any::<u64>()) {
        let mut rng = Rng64::seed(seed);
        let b = rng.normal_matrix(n, n + 3);
        let g = linalg::regularized_gram(&b, 0.01);
        let rhs = rng.normal_matrix(n, 2);
        let x = linalg::spd_solve(&g, &rhs).unwrap();
        let r = g.matmul(&x).unwrap().sub(&rhs).unwrap().max_abs();
        prop_assert!(r <= 1e-8 * (1.0 + g.max_abs() * x.max_abs()));
    }
}

#[test]
fn singular_gram_without_regularisation_is_an_error() {
    let a = random_matrix(4, 6, Some(2), 5);
    assert!(linalg::reg_pseudoinverse(&a, 0.0).is_err());
}
