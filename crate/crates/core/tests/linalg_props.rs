mod common;

use proptest::prelude::*;

use fedcbdr::linalg::{
    apply_mask, random_orthogonal, singular_values, thin_svd, Matrix, OrthogonalKind,
    OrthogonalMatrix,
};
use fedcbdr::rng::rng_from;

use common::{gaussian, oracle_singular_values};

fn kind() -> impl Strategy<Value = OrthogonalKind> {
    prop_oneof![
        Just(OrthogonalKind::Permutation),
        Just(OrthogonalKind::GeneralOrthogonal)
    ]
}

fn orthogonality_defect(m: &Matrix) -> f64 {
    m.transpose()
        .matmul(m)
        .unwrap()
        .max_abs_diff(&Matrix::identity(m.cols()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spectrum_is_mask_invariant(n in 1usize..60, d in 1usize..16, seed in any::<u64>(), pk in kind()) {
        let x = gaussian(n, d, &mut rng_from(seed));
        let p = random_orthogonal(n, seed ^ 1, pk).unwrap();
        let q = random_orthogonal(d, seed ^ 2, OrthogonalKind::GeneralOrthogonal).unwrap();
        let s = singular_values(&x).unwrap();
        let sm = singular_values(&apply_mask(&p, &x, &q).unwrap()).unwrap();
        let dev = s.iter().zip(&sm).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(dev / s[0] <= 1e-8, "deviation {}", dev / s[0]);
    }

    #[test]
    fn factors_satisfy_contract(n in 1usize..80, d in 1usize..24, seed in any::<u64>()) {
        let x = gaussian(n, d, &mut rng_from(seed));
        let f = thin_svd(&x).unwrap();
        let r = n.min(d);
        prop_assert_eq!(f.rank_bound(), r);
        prop_assert_eq!((f.u.rows(), f.u.cols()), (n, r));
        prop_assert_eq!((f.v.rows(), f.v.cols()), (d, r));
        prop_assert!(orthogonality_defect(&f.u) <= 1e-8);
        prop_assert!(orthogonality_defect(&f.v) <= 1e-8);
        prop_assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.s.iter().all(|&s| s >= 0.0));
        let err = f.reconstruct().max_abs_diff(&x);
        prop_assert!(err <= 1e-9 * x.frobenius_norm().max(1.0));
        let oracle = oracle_singular_values(&x);
        for (a, b) in f.s.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-9 * oracle[0]);
        }
    }

    #[test]
    fn rank_deficient_inputs_still_factor(n in 2usize..40, d in 2usize..12, rank in 1usize..4, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let rank = rank.min(n).min(d);
        let x = gaussian(n, rank, &mut rng).matmul(&gaussian(rank, d, &mut rng)).unwrap();
        let f = thin_svd(&x).unwrap();
        prop_assert!(orthogonality_defect(&f.u) <= 1e-8);
        prop_assert!(orthogonality_defect(&f.v) <= 1e-8);
        let rel = {
            let diff: Vec<f64> = f.reconstruct().data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
            diff.iter().map(|v| v * v).sum::<f64>().sqrt() / x.frobenius_norm()
        };
        prop_assert!(rel <= 1e-6);
        prop_assert_eq!(f.numerical_rank(1e-10), rank);
    }

    #[test]
    fn orthogonal_generation_is_deterministic(n in 1usize..40, seed in any::<u64>(), k in kind()) {
        let a = random_orthogonal(n, seed, k).unwrap();
        let b = random_orthogonal(n, seed, k).unwrap();
        let bits = |m: &OrthogonalMatrix| m.matrix().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
        prop_assert!(orthogonality_defect(a.matrix()) <= 1e-10);
    }

    #[test]
    fn permutation_round_trip_is_exact(n in 1usize..50, d in 1usize..10, seed in any::<u64>()) {
        let x = gaussian(n, d, &mut rng_from(seed));
        let p = random_orthogonal(n, seed, OrthogonalKind::Permutation).unwrap();
        let id = OrthogonalMatrix::identity(d);
        let masked = apply_mask(&p, &x, &id).unwrap();
        let back = apply_mask(&p.transpose(), &masked, &id).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn permutation_has_unit_rows_and_columns(n in 1usize..60, seed in any::<u64>()) {
        let p = random_orthogonal(n, seed, OrthogonalKind::Permutation).unwrap();
        let m = p.matrix();
        for i in 0..n {
            prop_assert_eq!(m.row(i).iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert_eq!(m.row(i).iter().filter(|&&v| v == 0.0).count(), n - 1);
            prop_assert_eq!(m.column(i).iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }
}

#[test]
fn reconstruction_at_the_largest_stated_size() {
    let x = gaussian(200, 64, &mut rng_from(99));
    let f = thin_svd(&x).unwrap();
    let diff: Vec<f64> = f
        .reconstruct()
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| a - b)
        .collect();
    let rel = diff.iter().map(|v| v * v).sum::<f64>().sqrt() / x.frobenius_norm();
    assert!(rel <= 1e-6, "relative reconstruction error {rel}");
    assert!(orthogonality_defect(&f.u) <= 1e-8);
    assert!(orthogonality_defect(&f.v) <= 1e-8);
}

#[test]
fn wide_and_tall_agree_on_spectrum() {
    let x = gaussian(7, 19, &mut rng_from(5));
    let a = singular_values(&x).unwrap();
    let b = singular_values(&x.transpose()).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() <= 1e-12 * a[0]);
    }
}

#[test]
fn non_finite_input_is_rejected() {
    assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    assert!(Matrix::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
}
