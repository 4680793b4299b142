//! Parameter updates on the SPD manifold (BW metric) and the Stiefel manifold.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SpdMatrix, SymmetricMatrix};
use crate::metrics::bw_exp;

/// Maximum number of step halvings when an RSGD step leaves the manifold.
pub const MAX_HALVINGS: usize = 20;

/// BW Riemannian gradient `R = 2(G X + X G)` of a Euclidean gradient, `G = sym(∇L)`.
///
/// `R` is the unique tangent vector with `g^BW_X(R, S) = tr(G S)` for all symmetric `S`.
pub fn bw_riemannian_gradient(x: &SpdMatrix, euclid_grad: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    if euclid_grad.shape() != (x.dim(), x.dim()) {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: euclid_grad.nrows(),
        });
    }
    let g = symmetrize(euclid_grad);
    let xm = x.as_matrix();
    SymmetricMatrix::new((&g * xm + xm * &g) * 2.0)
}

/// `Exp_X(-μ R)`, halving `μ` while the step leaves the SPD manifold.
pub fn rsgd_step(param: &SpdMatrix, euclid_grad: &DMatrix<f64>, lr: f64) -> Result<SpdMatrix> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Optimizer(format!("learning rate must be positive, got {lr}")));
    }
    let r = bw_riemannian_gradient(param, euclid_grad)?;
    if r.as_matrix().iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimizer("non-finite gradient".into()));
    }
    let mut mu = lr;
    for _ in 0..=MAX_HALVINGS {
        match bw_exp(param, &r.scale(-mu)) {
            Ok(next) => return Ok(next),
            Err(e) if e.is_numerical() => mu *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Optimizer(format!(
        "RSGD step left the SPD manifold after {MAX_HALVINGS} halvings (lr {lr})"
    )))
}

/// Thin QR with positive diagonal `R`; errors when `R` is numerically rank deficient.
fn qr_retract(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = a.ncols();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        let d = r[(j, j)];
        if d.abs() <= 1e-12 * scale {
            return Err(Error::Optimizer(format!("rank-deficient Stiefel retraction (column {j})")));
        }
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Riemannian gradient step on the Stiefel manifold: project `G - W sym(WᵀG)`, step,
/// retract by QR.
pub fn stiefel_step(w: &DMatrix<f64>, euclid_grad: &DMatrix<f64>, lr: f64) -> Result<DMatrix<f64>> {
    if w.shape() != euclid_grad.shape() {
        return Err(Error::DimensionMismatch {
            expected: w.nrows(),
            found: euclid_grad.nrows(),
        });
    }
    if w.ncols() > w.nrows() {
        return Err(Error::Precondition(format!(
            "Stiefel point must be tall, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let wtg = w.transpose() * euclid_grad;
    let xi = euclid_grad - w * symmetrize(&wtg);
    qr_retract(w - xi * lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{gaussian_matrix, random_spd, random_stiefel, random_symmetric};
    use crate::linalg::rel_frobenius;
    use crate::metrics::{bw_distance, bw_inner};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let x = random_spd(&mut rng, 4, 10.0);
        let y = rsgd_step(&x, &DMatrix::zeros(4, 4), 0.1).unwrap();
        assert!(rel_frobenius(y.as_matrix(), x.as_matrix()) < 1e-15);

        let w = random_stiefel(&mut rng, 6, 3);
        let v = stiefel_step(&w, &DMatrix::zeros(6, 3), 0.1).unwrap();
        assert!((v - &w).norm() < 1e-14);
    }

    #[test]
    fn riemannian_gradient_is_metric_compatible() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        for _ in 0..100 {
            let x = random_spd(&mut rng, 5, 100.0);
            let g = gaussian_matrix(&mut rng, 5, 5);
            let s = random_symmetric(&mut rng, 5);
            let r = bw_riemannian_gradient(&x, &g).unwrap();
            let lhs = bw_inner(&x, &r, &s).unwrap();
            let rhs = (symmetrize(&g) * s.as_matrix()).trace();
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        }
        let s = random_symmetric(&mut rng, 3);
        let r = bw_riemannian_gradient(&SpdMatrix::identity(3), s.as_matrix()).unwrap();
        assert!((r.as_matrix() - s.as_matrix() * 4.0).norm() < 1e-14);
    }

    #[test]
    fn small_step_length_matches_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let x = random_spd(&mut rng, 4, 10.0);
        let g = gaussian_matrix(&mut rng, 4, 4);
        let mu = 1e-4;
        let y = rsgd_step(&x, &g, mu).unwrap();
        let r = bw_riemannian_gradient(&x, &g).unwrap();
        let expected = mu * bw_inner(&x, &r, &r).unwrap().sqrt();
        let d = bw_distance(&x, &y).unwrap();
        assert!((d - expected).abs() < 0.05 * expected);
    }

    #[test]
    fn rsgd_stays_spd_and_halves_large_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        for i in 0..1000 {
            let x = random_spd(&mut rng, 4, 1e4);
            let g = gaussian_matrix(&mut rng, 4, 4);
            let lr = [1e-3, 0.1, 10.0][i % 3];
            let y = rsgd_step(&x, &g, lr).unwrap();
            assert!(y.eig().min_value() > 0.0);
        }
        // A unit step along 4S with S = I leaves the manifold; halving recovers.
        let y = rsgd_step(&SpdMatrix::identity(2), &DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(y.eig().min_value() > 0.0);
        assert!(rsgd_step(&SpdMatrix::identity(2), &DMatrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn stiefel_orthonormality_survives_many_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        let mut w = random_stiefel(&mut rng, 8, 3);
        for _ in 0..1000 {
            let g = gaussian_matrix(&mut rng, 8, 3);
            w = stiefel_step(&w, &g, 0.01).unwrap();
        }
        let drift = (w.transpose() * &w - DMatrix::identity(3, 3)).norm();
        assert!(drift < 1e-8, "drift {drift}");
    }

    #[test]
    fn single_column_is_a_sphere_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(76);
        let w = random_stiefel(&mut rng, 5, 1);
        let g = gaussian_matrix(&mut rng, 5, 1);
        let lr = 0.1;
        let v = stiefel_step(&w, &g, lr).unwrap();
        let tangent = &g - &w * (w.transpose() * &g)[(0, 0)];
        let step = &w - tangent * lr;
        let expected = &step / step.norm();
        assert!((v - expected).norm() < 1e-14);
    }
}
