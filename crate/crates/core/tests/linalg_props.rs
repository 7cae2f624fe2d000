//! Algebraic invariants of the dense linear-algebra helpers.

use nalgebra::DMatrix;
use proptest::prelude::*;
use sdecal::linalg::{commutation, expm, kron, psd_sqrt, solve_lyapunov, sym, unvec, vec};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn triple() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (1..4usize, 1..4usize, 1..4usize, 1..4usize).prop_flat_map(|(p, q, r, s)| (matrix(p, q), matrix(q, r), matrix(r, s)))
}

proptest! {
    #[test]
    fn vec_of_triple_product((a, b, c) in triple()) {
        let lhs = vec(&(&a * &b * &c));
        let rhs = kron(&c.transpose(), &a) * vec(&b);
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn unvec_inverts_vec(a in matrix(3, 2)) {
        prop_assert_eq!(unvec(&vec(&a), 3, 2), a);
    }

    #[test]
    fn commutation_transposes(a in matrix(3, 3)) {
        let k = commutation(3);
        prop_assert!((&k * vec(&a) - vec(&a.transpose())).amax() == 0.0);
        prop_assert!((&k * &k - DMatrix::identity(9, 9)).amax() == 0.0);
    }

    #[test]
    fn kron_mixed_product(a in matrix(2, 2), b in matrix(3, 3), c in matrix(2, 2), d in matrix(3, 3)) {
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn sym_is_symmetric_and_idempotent(a in matrix(4, 4)) {
        let s = sym(&a);
        prop_assert_eq!(&s, &s.transpose());
        prop_assert_eq!(sym(&s), s);
    }

    #[test]
    fn psd_sqrt_squares_back(l in matrix(3, 3)) {
        let a = &l * l.transpose() + DMatrix::identity(3, 3) * 0.1;
        let r = psd_sqrt(&a).unwrap();
        prop_assert!((&r * &r - &a).amax() <= 1e-10 * a.amax().max(1.0));
        prop_assert!((&r - r.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn lyapunov_residual_vanishes(m in matrix(3, 3), l in matrix(3, 3)) {
        // Shifting by more than the spectral radius keeps H stable.
        let shift = m.norm() + 0.5;
        let h = &m + DMatrix::identity(3, 3) * shift;
        let q = &l * l.transpose() + DMatrix::identity(3, 3);
        let f = solve_lyapunov(&h, &q).unwrap();
        let residual = &h * &f + &f * h.transpose() - &q;
        prop_assert!(residual.amax() <= 1e-9 * q.amax());
        prop_assert!((&f - f.transpose()).amax() <= 1e-10 * f.amax());
    }

    #[test]
    fn expm_of_sum_of_commuting(a in matrix(3, 3), s in -1.0..1.0f64, t in -1.0..1.0f64) {
        let lhs = expm(&(&a * (s + t)));
        let rhs = expm(&(&a * s)) * expm(&(&a * t));
        prop_assert!((&lhs - &rhs).amax() <= 1e-9 * lhs.amax().max(1.0));
    }
}
