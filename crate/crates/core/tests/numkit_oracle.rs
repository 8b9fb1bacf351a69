//! numkit against nalgebra on random matrices.

use nalgebra::DMatrix;
use polysync::numkit::{self, Mat};
use proptest::prelude::*;

fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

fn from_na(m: &DMatrix<f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn mat(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Mat> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| Mat::from_fn(r, c, |i, j| v[i * c + j]))
    })
}

fn square(n: std::ops::Range<usize>) -> impl Strategy<Value = Mat> {
    n.prop_flat_map(|n| prop::collection::vec(-5.0f64..5.0, n * n).prop_map(move |v| Mat::from_fn(n, n, |i, j| v[i * n + j])))
}

/// `rows × cols` product of rank at most `k`.
fn low_rank(rows: usize, cols: usize, k: std::ops::Range<usize>) -> impl Strategy<Value = Mat> {
    k.prop_flat_map(move |k| (mat(rows..rows + 1, k..k + 1), mat(k..k + 1, cols..cols + 1)))
        .prop_map(|(a, b)| a.matmul(&b).unwrap())
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
    a.shape() == b.shape() && a.try_sub(b).unwrap().max_abs() <= tol * (1.0 + b.max_abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singular_values_match(m in mat(1..7, 1..7)) {
        let ours = numkit::singular_values(&m).unwrap();
        let theirs = sorted(to_na(&m).singular_values().iter().copied().collect());
        prop_assert_eq!(ours.len(), theirs.len());
        for (a, b) in ours.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b), "{ours:?} vs {theirs:?}");
        }
    }

    #[test]
    fn pseudoinverse_matches(m in mat(1..6, 1..8)) {
        let ours = numkit::pinv(&m, 1e-10).unwrap();
        let theirs = from_na(&to_na(&m).pseudo_inverse(1e-10).unwrap());
        prop_assert!(close(&ours, &theirs, 1e-7), "{ours:?}\nvs\n{theirs:?}");
    }

    #[test]
    fn pseudoinverse_of_rank_deficient_product(m in low_rank(4, 5, 2..3)) {
        let tol = 1e-9 * (1.0 + m.max_abs());
        let ours = numkit::pinv(&m, tol).unwrap();
        let theirs = from_na(&to_na(&m).pseudo_inverse(tol).unwrap());
        prop_assert!(close(&ours, &theirs, 1e-6));
        prop_assert!(numkit::rank(&m, tol).unwrap() <= 2);
    }

    #[test]
    fn eigenvalue_moduli_match(m in square(1..8)) {
        let ours = sorted(numkit::eigenvalues(&m).unwrap().moduli());
        let theirs = sorted(to_na(&m).complex_eigenvalues().iter().map(|z| z.norm()).collect());
        for (a, b) in ours.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-7 * (1.0 + b), "{ours:?} vs {theirs:?}");
        }
        let radius = numkit::spectral_radius(&m).unwrap();
        prop_assert!((radius - theirs[0]).abs() <= 1e-7 * (1.0 + theirs[0]));
    }

    #[test]
    fn symmetric_eigenvalues_match(m in square(1..8)) {
        let s = m.symmetrize();
        let (vals, vecs) = numkit::sym_eigen(&s).unwrap();
        let theirs = to_na(&s).symmetric_eigen();
        let mut t: Vec<f64> = theirs.eigenvalues.iter().copied().collect();
        t.sort_by(f64::total_cmp);
        let mut o = vals.clone();
        o.sort_by(f64::total_cmp);
        for (a, b) in o.iter().zip(&t) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        // S·V = V·diag(λ)
        let lhs = s.matmul(&vecs).unwrap();
        let rhs = vecs.matmul(&Mat::diag(&vals)).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-9));
    }

    #[test]
    fn inverse_matches(m in square(1..7)) {
        let na = to_na(&m);
        prop_assume!(na.clone().svd(false, false).singular_values.min() > 1e-3);
        let ours = numkit::inverse(&m).unwrap();
        let theirs = from_na(&na.try_inverse().unwrap());
        prop_assert!(close(&ours, &theirs, 1e-7));
    }

    #[test]
    fn null_space_is_orthonormal_and_annihilated(m in low_rank(3, 6, 1..3)) {
        let n = numkit::null_space(&m, 1e-9 * (1.0 + m.max_abs())).unwrap();
        let na_rank = to_na(&m).rank(1e-9 * (1.0 + m.max_abs()));
        prop_assert_eq!(n.cols(), m.cols() - na_rank);
        prop_assert!(m.matmul(&n).unwrap().max_abs() <= 1e-8 * (1.0 + m.max_abs()));
        prop_assert!(close(&n.transpose().matmul(&n).unwrap(), &Mat::identity(n.cols()), 1e-9));
    }

    #[test]
    fn least_squares_matches_normal_equations(a in mat(6..9, 1..4), b in mat(6..9, 1..3)) {
        prop_assume!(a.rows() == b.rows());
        let na = to_na(&a);
        prop_assume!(na.clone().svd(false, false).singular_values.min() > 1e-2);
        let ours = numkit::solve_least_squares(&a, &b).unwrap();
        let theirs = from_na(&(na.pseudo_inverse(1e-12).unwrap() * to_na(&b)));
        prop_assert!(close(&ours, &theirs, 1e-8));
    }
}
