//! Operators of the Bures-Wasserstein metric.
//!
//! `g_X(S₁, S₂) = ½ tr(L_X(S₁) S₂)` where `L_X` solves the Lyapunov equation. Geodesics are
//! `γ(t) = (I + t L_X(S)) X (I + t L_X(S))`, which leave the manifold once `I + t L_X(S)`
//! loses definiteness, so `exp` and `geodesic` check that condition instead of trusting the
//! formula.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    check_dims, eigh, lyapunov_solve, product_sqrt, EigDecomposition, SpdMatrix, SymmetricMatrix,
};

/// Radicands of the distance in `[-NEGATIVE_RADICAND_TOL, 0)` are rounding noise.
pub const NEGATIVE_RADICAND_TOL: f64 = 1e-10;

/// Below this relative squared distance, `bw_distance_sq` switches to the tangent form.
const NEAR_POINT_RTOL: f64 = 1e-6;

/// Relative tolerance of the commutation precondition for parallel transport.
pub const COMMUTATION_RTOL: f64 = 1e-8;

pub fn bw_inner(x: &SpdMatrix, s1: &SymmetricMatrix, s2: &SymmetricMatrix) -> Result<f64> {
    check_dims(x.dim(), s2.dim())?;
    let l = lyapunov_solve(x, s1)?;
    Ok(0.5 * l.dot(s2))
}

/// Squared BW distance `tr X + tr Y - 2 tr((X^{1/2} Y X^{1/2})^{1/2})`, clamped at zero.
pub fn bw_distance_sq(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_dims(x.dim(), y.dim())?;
    let xs = x.sqrt();
    let inner = SpdMatrix::from_matrix(xs.as_matrix() * y.as_matrix() * xs.as_matrix())
        .map_err(|e| e.with_context("bw_distance"))?;
    let cross = inner.sqrt().trace();
    let radicand = x.trace() + y.trace() - 2.0 * cross;
    let scale = (x.trace() + y.trace()).max(1.0);
    if radicand.abs() < NEAR_POINT_RTOL * scale {
        // The trace form cancels catastrophically for close points; the squared norm of
        // the logarithm is the same quantity without the cancellation.
        let log = bw_log(x, y)?;
        return Ok(bw_inner(x, &log, &log)?.max(0.0));
    }
    if radicand < 0.0 {
        if radicand < -NEGATIVE_RADICAND_TOL * scale {
            return Err(Error::numerical(
                "bw_distance",
                format!("negative squared distance {radicand:e}"),
            ));
        }
        return Ok(0.0);
    }
    Ok(radicand)
}

pub fn bw_distance(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    bw_distance_sq(x, y).map(f64::sqrt)
}

/// Smallest eigenvalue of `I + t L`, the geodesic-completeness witness.
fn completeness_margin(l: &SymmetricMatrix, t: f64) -> Result<f64> {
    let e = l.scale(t).shift(1.0).eigh()?;
    Ok(e.min_value())
}

/// `(I + tL) X (I + tL)`, equal to `X + tS + t² L X L` for `L = L_X(S)`.
fn geodesic_point(x: &SpdMatrix, l: &SymmetricMatrix, t: f64, context: &str) -> Result<SpdMatrix> {
    let margin = completeness_margin(l, t)?;
    if !(margin > 0.0) {
        return Err(Error::out_of_domain(
            format!("{context}: I + t·L_X(S) is not positive definite"),
            margin,
        ));
    }
    let a = l.scale(t).shift(1.0);
    let a = a.as_matrix();
    SpdMatrix::from_matrix(a * x.as_matrix() * a).map_err(|e| e.with_context(context))
}

/// `Exp_X(S) = X + S + L_X(S) X L_X(S)`.
pub fn bw_exp(x: &SpdMatrix, s: &SymmetricMatrix) -> Result<SpdMatrix> {
    let l = lyapunov_solve(x, s)?;
    geodesic_point(x, &l, 1.0, "bw_exp")
}

/// `Log_X(Y) = (YX)^{1/2} + (XY)^{1/2} - 2X`.
pub fn bw_log(x: &SpdMatrix, y: &SpdMatrix) -> Result<SymmetricMatrix> {
    let p = product_sqrt(x, y)?;
    let log = &p + p.transpose() - x.as_matrix() * 2.0;
    SymmetricMatrix::new(log)
}

/// `γ_{X,S}(t) = X + tS + t² L_X(S) X L_X(S)`.
pub fn bw_geodesic(x: &SpdMatrix, s: &SymmetricMatrix, t: f64) -> Result<SpdMatrix> {
    let l = lyapunov_solve(x, s)?;
    geodesic_point(x, &l, t, "bw_geodesic")
}

/// `Exp_I(S) = (I + S/2)²`.
pub fn exp_at_identity(s: &SymmetricMatrix) -> Result<SpdMatrix> {
    let a = s.scale(0.5).shift(1.0);
    let e = a.eigh()?;
    if !(e.min_value() > 0.0) {
        return Err(Error::out_of_domain(
            "exp at identity: I + S/2 is not positive definite",
            e.min_value(),
        ));
    }
    let a = a.as_matrix();
    SpdMatrix::from_matrix(a * a).map_err(|e| e.with_context("exp at identity"))
}

/// `Log_I(X) = 2X^{1/2} - 2I`.
pub fn log_at_identity(x: &SpdMatrix) -> SymmetricMatrix {
    x.sqrt().scale(2.0).shift(-2.0)
}

/// Common eigenbasis of two commuting SPD matrices, with each one's eigenvalues in it.
fn joint_eigenbasis(x1: &SpdMatrix, x2: &SpdMatrix) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    let (basis, e1, e2) = if x1.is_scalar() {
        (x2.eig().vectors().clone(), None, Some(x2.eig()))
    } else if x2.is_scalar() {
        (x1.eig().vectors().clone(), Some(x1.eig()), None)
    } else {
        // A generic combination separates eigenspaces that either matrix alone would merge.
        let w = 0.618_033_988_749_894_8 * x1.as_matrix().norm() / x2.as_matrix().norm();
        let combo: EigDecomposition = eigh(&(x1.as_matrix() + x2.as_matrix() * w))?;
        (combo.vectors().clone(), None, None)
    };
    let rayleigh = |m: &SpdMatrix, e: Option<&EigDecomposition>| -> Vec<f64> {
        match e {
            Some(e) => e.values().iter().copied().collect(),
            None => (0..basis.ncols())
                .map(|i| {
                    let u = basis.column(i);
                    (u.transpose() * m.as_matrix() * u)[(0, 0)]
                })
                .collect(),
        }
    };
    let l1 = rayleigh(x1, e1);
    let l2 = rayleigh(x2, e2);
    Ok((basis, l1, l2))
}

/// Parallel transport `Γ_{X₁→X₂}(S) = U [√((δᵢ+δⱼ)/(λᵢ+λⱼ)) S'ᵢⱼ] Uᵀ` between commuting points.
pub fn bw_parallel_transport(
    x1: &SpdMatrix,
    x2: &SpdMatrix,
    s: &SymmetricMatrix,
) -> Result<SymmetricMatrix> {
    check_dims(x1.dim(), x2.dim())?;
    check_dims(x1.dim(), s.dim())?;
    let (a, b) = (x1.as_matrix(), x2.as_matrix());
    let commutator = (a * b - b * a).norm();
    if commutator >= COMMUTATION_RTOL * a.norm() * b.norm() {
        return Err(Error::Precondition(format!(
            "parallel transport needs commuting endpoints (commutator norm {commutator:e})"
        )));
    }
    let (u, lam, del) = joint_eigenbasis(x1, x2)?;
    let mut rotated = u.transpose() * s.as_matrix() * &u;
    let n = lam.len();
    for i in 0..n {
        for j in 0..n {
            rotated[(i, j)] *= ((del[i] + del[j]) / (lam[i] + lam[j])).sqrt();
        }
    }
    SymmetricMatrix::new(&u * rotated * u.transpose())
}

/// `Γ_{X→I}` in the eigenbasis of `X`: scale by `√(2/(λᵢ+λⱼ))`.
pub fn transport_to_identity(x: &SpdMatrix, s: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    check_dims(x.dim(), s.dim())?;
    let t = x
        .eig()
        .spectral_hadamard(s.as_matrix(), |a, b| (2.0 / (a + b)).sqrt());
    SymmetricMatrix::new(t)
}

/// `Γ_{I→X}` in the eigenbasis of `X`: scale by `√((δᵢ+δⱼ)/2)`.
pub fn transport_from_identity(x: &SpdMatrix, s: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    check_dims(x.dim(), s.dim())?;
    let t = x
        .eig()
        .spectral_hadamard(s.as_matrix(), |a, b| (0.5 * (a + b)).sqrt());
    SymmetricMatrix::new(t)
}

/// Move a point along the transport between commuting `x1` and `x2`:
/// `φ(P) = Exp_{X₂}(Γ_{X₁→X₂}(Log_{X₁}(P)))`.
pub fn bw_manifold_transport(x1: &SpdMatrix, x2: &SpdMatrix, p: &SpdMatrix) -> Result<SpdMatrix> {
    let log = bw_log(x1, p)?;
    let moved = bw_parallel_transport(x1, x2, &log)?;
    bw_exp(x2, &moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{random_diagonal_spd, random_spd, random_symmetric};
    use crate::linalg::rel_frobenius;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ddiag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    fn diag(v: &[f64]) -> SpdMatrix {
        SpdMatrix::from_diagonal(v).unwrap()
    }

    fn scalar(d: usize, c: f64) -> SpdMatrix {
        SpdMatrix::scalar(d, c).unwrap()
    }

    #[test]
    fn inner_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_symmetric(&mut rng, 4);
        let v = bw_inner(&SpdMatrix::identity(4), &s, &s).unwrap();
        let expected = 0.25 * (s.as_matrix() * s.as_matrix()).trace();
        assert!((v - expected).abs() < 1e-13 * expected);

        let x = random_spd(&mut rng, 4, 10.0);
        assert_eq!(bw_inner(&x, &SymmetricMatrix::zeros(4), &s).unwrap(), 0.0);

        // L = diag(2/2, 4/6) → ½(2·1 + 4·2/3) = 7/3.
        let s = SymmetricMatrix::from_diagonal(&[2.0, 4.0]);
        let v = bw_inner(&diag(&[1.0, 3.0]), &s, &s).unwrap();
        assert!((v - 7.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_spd(&mut rng, 5, 100.0);
        assert!(bw_distance(&x, &x).unwrap() < 1e-6);
        let d = bw_distance(&scalar(2, 4.0), &SpdMatrix::identity(2)).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-14);
        let d = bw_distance(&diag(&[9.0, 1.0]), &SpdMatrix::identity(2)).unwrap();
        assert!((d - 2.0).abs() < 1e-14);
    }

    #[test]
    fn distance_commuting_closed_form_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = random_diagonal_spd(&mut rng, 6, 1e-2, 1e2);
            let y = random_diagonal_spd(&mut rng, 6, 1e-2, 1e2);
            let expected: f64 = x
                .as_matrix()
                .diagonal()
                .iter()
                .zip(y.as_matrix().diagonal().iter())
                .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
                .sum::<f64>()
                .sqrt();
            let d = bw_distance(&x, &y).unwrap();
            assert!((d - expected).abs() < 1e-10 * (1.0 + expected));
            assert!((d - bw_distance(&y, &x).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn distance_resolves_close_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_spd(&mut rng, 6, 100.0);
        let s = random_symmetric(&mut rng, 6);
        for t in [1e-4, 1e-7, 1e-10] {
            let y = bw_exp(&x, &s.scale(t)).unwrap();
            let expected = t * bw_inner(&x, &s, &s).unwrap().sqrt();
            let d = bw_distance(&x, &y).unwrap();
            assert!((d - expected).abs() < 1e-3 * expected, "t {t}: {d} vs {expected}");
        }
    }

    #[test]
    fn exp_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_spd(&mut rng, 4, 10.0);
        let e = bw_exp(&x, &SymmetricMatrix::zeros(4)).unwrap();
        assert!(rel_frobenius(e.as_matrix(), x.as_matrix()) < 1e-14);

        let e = bw_exp(&SpdMatrix::identity(3), &SymmetricMatrix::identity(3).scale(2.0)).unwrap();
        assert!(rel_frobenius(e.as_matrix(), scalar(3, 4.0).as_matrix()) < 1e-15);

        let s = random_symmetric(&mut rng, 4).scale(0.3);
        let e = bw_exp(&SpdMatrix::identity(4), &s).unwrap();
        let half = s.scale(0.5).shift(1.0);
        let expected = half.as_matrix() * half.as_matrix();
        assert!(rel_frobenius(e.as_matrix(), &expected) < 1e-13);
        let closed = exp_at_identity(&s).unwrap();
        assert!(rel_frobenius(closed.as_matrix(), &expected) < 1e-14);
    }

    #[test]
    fn exp_outside_completeness_domain_is_typed_error() {
        let s = SymmetricMatrix::from_diagonal(&[-3.0, 1.0]);
        match bw_exp(&SpdMatrix::identity(2), &s) {
            Err(Error::OutOfDomain { eigenvalue, .. }) => assert!((eigenvalue + 0.5).abs() < 1e-14),
            other => panic!("expected out-of-domain, got {other:?}"),
        }
        assert!(exp_at_identity(&s).is_err());
    }

    #[test]
    fn log_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_spd(&mut rng, 4, 10.0);
        assert!(bw_log(&x, &x).unwrap().frobenius_norm() < 1e-12);
        let l = bw_log(&SpdMatrix::identity(2), &scalar(2, 4.0)).unwrap();
        assert!((l.as_matrix() - SymmetricMatrix::identity(2).scale(2.0).as_matrix()).norm() < 1e-14);
        let l = bw_log(&SpdMatrix::identity(2), &diag(&[9.0, 4.0])).unwrap();
        assert!((l.as_matrix() - ddiag(&[4.0, 2.0])).norm() < 1e-13);
        let y = random_spd(&mut rng, 4, 10.0);
        let closed = log_at_identity(&y);
        let general = bw_log(&SpdMatrix::identity(4), &y).unwrap();
        assert!(rel_frobenius(closed.as_matrix(), general.as_matrix()) < 1e-13);
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for d in [2, 7, 16] {
            let x = random_spd(&mut rng, d, 1e4);
            let y = random_spd(&mut rng, d, 1e4);
            let back = bw_exp(&x, &bw_log(&x, &y).unwrap()).unwrap();
            assert!(rel_frobenius(back.as_matrix(), y.as_matrix()) < 1e-8);
        }
    }

    #[test]
    fn geodesic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_spd(&mut rng, 3, 10.0);
        let s = random_symmetric(&mut rng, 3).scale(0.2);
        let g0 = bw_geodesic(&x, &s, 0.0).unwrap();
        assert!(rel_frobenius(g0.as_matrix(), x.as_matrix()) < 1e-15);
        let g1 = bw_geodesic(&x, &s, 1.0).unwrap();
        let e = bw_exp(&x, &s).unwrap();
        assert!(rel_frobenius(g1.as_matrix(), e.as_matrix()) < 1e-12);
        let g = bw_geodesic(&SpdMatrix::identity(2), &SymmetricMatrix::identity(2).scale(2.0), 0.5)
            .unwrap();
        assert!(rel_frobenius(g.as_matrix(), scalar(2, 2.25).as_matrix()) < 1e-15);
        let s = SymmetricMatrix::from_diagonal(&[-1.0, 0.0]);
        assert!(bw_geodesic(&SpdMatrix::identity(2), &s, 1.0).is_ok());
        assert!(matches!(
            bw_geodesic(&SpdMatrix::identity(2), &s, 3.0),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn parallel_transport_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_spd(&mut rng, 4, 20.0);
        let s = random_symmetric(&mut rng, 4);
        let same = bw_parallel_transport(&x, &x, &s).unwrap();
        assert!(rel_frobenius(same.as_matrix(), s.as_matrix()) < 1e-12);

        let i4 = SpdMatrix::identity(4);
        let to = bw_parallel_transport(&x, &i4, &s).unwrap();
        let to2 = transport_to_identity(&x, &s).unwrap();
        assert!(rel_frobenius(to.as_matrix(), to2.as_matrix()) < 1e-13);
        let n0 = bw_inner(&x, &s, &s).unwrap();
        assert!((bw_inner(&i4, &to, &to).unwrap() - n0).abs() < 1e-8 * n0);

        let from = bw_parallel_transport(&i4, &x, &s).unwrap();
        let from2 = transport_from_identity(&x, &s).unwrap();
        assert!(rel_frobenius(from.as_matrix(), from2.as_matrix()) < 1e-13);
        let n0 = bw_inner(&i4, &s, &s).unwrap();
        assert!((bw_inner(&x, &from, &from).unwrap() - n0).abs() < 1e-8 * n0);

        // Distinct commuting diagonal endpoints go through the joint-basis path.
        let a = random_diagonal_spd(&mut rng, 4, 0.1, 10.0);
        let b = random_diagonal_spd(&mut rng, 4, 0.1, 10.0);
        let t = bw_parallel_transport(&a, &b, &s).unwrap();
        let n0 = bw_inner(&a, &s, &s).unwrap();
        assert!((bw_inner(&b, &t, &t).unwrap() - n0).abs() < 1e-8 * n0);

        let y = random_spd(&mut rng, 4, 20.0);
        assert!(matches!(
            bw_parallel_transport(&x, &y, &s),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn manifold_transport_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x1 = random_spd(&mut rng, 3, 10.0);
        let x2 = SpdMatrix::identity(3);
        let p = bw_manifold_transport(&x1, &x2, &x1).unwrap();
        assert!(rel_frobenius(p.as_matrix(), x2.as_matrix()) < 1e-8);
        let q = random_spd(&mut rng, 3, 10.0);
        let same = bw_manifold_transport(&x1, &x1, &q).unwrap();
        assert!(rel_frobenius(same.as_matrix(), q.as_matrix()) < 1e-8);

        // Log_{4I}(9I) = 2·6I - 8I = 4I; transport to I scales by 1/2; Exp_I(2I) = 4I.
        let (four, one, nine) = (scalar(2, 4.0), SpdMatrix::identity(2), scalar(2, 9.0));
        let down = bw_manifold_transport(&four, &one, &nine).unwrap();
        assert!(rel_frobenius(down.as_matrix(), scalar(2, 4.0).as_matrix()) < 1e-13);
        let back = bw_manifold_transport(&one, &four, &down).unwrap();
        assert!(rel_frobenius(back.as_matrix(), nine.as_matrix()) < 1e-8);
    }
}
