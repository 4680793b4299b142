use nalgebra::DMatrix;

use super::eigen::MatrixFunction;
use super::matrix::{check_dims, SpdMatrix, SymmetricMatrix};
use crate::error::{Error, Result};

/// `U f(Λ) Uᵀ` for an SPD input.
pub fn matrix_function(x: &SpdMatrix, f: MatrixFunction) -> Result<SymmetricMatrix> {
    if let MatrixFunction::ReluFloor(eps) = f {
        if !(eps > 0.0) {
            return Err(Error::Precondition(format!("relu floor must be positive, got {eps}")));
        }
    }
    Ok(x.map(f))
}

/// `(XY)^{1/2} = X^{1/2} (X^{1/2} Y X^{1/2})^{1/2} X^{-1/2}`.
///
/// The product of two SPD matrices is not symmetric, but it is similar to an SPD matrix,
/// so its principal square root is well defined and computable from symmetric roots.
pub fn product_sqrt(x: &SpdMatrix, y: &SpdMatrix) -> Result<DMatrix<f64>> {
    check_dims(x.dim(), y.dim())?;
    let xs = x.sqrt();
    let xis = x.inv_sqrt();
    let inner = SpdMatrix::from_matrix(xs.as_matrix() * y.as_matrix() * xs.as_matrix())
        .map_err(|e| e.with_context("product_sqrt"))?;
    Ok(xs.as_matrix() * inner.sqrt().as_matrix() * xis.as_matrix())
}

/// Solve `X L + L X = S` in the eigenbasis of `X`: `L = V [S'ᵢⱼ / (δᵢ + δⱼ)] Vᵀ`.
pub fn lyapunov_solve(x: &SpdMatrix, s: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    check_dims(x.dim(), s.dim())?;
    let l = x
        .eig()
        .spectral_hadamard(s.as_matrix(), |a, b| 1.0 / (a + b));
    Ok(SymmetricMatrix::from_square(l))
}

/// Solve `X L M + M L X = S` by reducing to an ordinary Lyapunov equation in the
/// `M^{-1/2}` congruence frame.
pub fn generalized_lyapunov_solve(
    x: &SpdMatrix,
    m: &SpdMatrix,
    s: &SymmetricMatrix,
) -> Result<SymmetricMatrix> {
    check_dims(x.dim(), m.dim())?;
    check_dims(x.dim(), s.dim())?;
    let mis = m.inv_sqrt();
    let mis = mis.as_matrix();
    let x_red = SpdMatrix::from_matrix(mis * x.as_matrix() * mis)
        .map_err(|e| e.with_context("generalized_lyapunov_solve"))?;
    let s_red = SymmetricMatrix::from_square(mis * s.as_matrix() * mis);
    let l_red = lyapunov_solve(&x_red, &s_red)?;
    Ok(SymmetricMatrix::from_square(mis * l_red.as_matrix() * mis))
}

/// `λ_max / λ_min`.
pub fn condition_number(x: &SpdMatrix) -> f64 {
    x.eig().max_value() / x.eig().min_value()
}

/// `X + λI`, validated as SPD.
pub fn regularize(x: &SymmetricMatrix, lambda: f64) -> Result<SpdMatrix> {
    if !(lambda >= 0.0) {
        return Err(Error::Precondition(format!("regularization must be nonnegative, got {lambda}")));
    }
    SpdMatrix::new(x.shift(lambda))
}

/// Relative Frobenius distance `‖a - b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
