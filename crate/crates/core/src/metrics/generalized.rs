//! Affine-invariant, generalized BW, and their power deformations.

use crate::error::{Error, Result};
use crate::linalg::{
    check_dims, generalized_lyapunov_solve, lyapunov_solve, spectral_derivative, MatrixFunction,
    SpdMatrix, SymmetricMatrix,
};

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if theta == 0.0 || !theta.is_finite() {
        return Err(Error::Precondition(format!(
            "deformation exponent must be finite and nonzero, got {theta}"
        )));
    }
    Ok(())
}

/// `tr(X⁻¹ S₁ X⁻¹ S₂)`.
pub fn ai_inner(x: &SpdMatrix, s1: &SymmetricMatrix, s2: &SymmetricMatrix) -> Result<f64> {
    check_dims(x.dim(), s1.dim())?;
    check_dims(x.dim(), s2.dim())?;
    let inv = x.inverse();
    let inv = inv.as_matrix();
    let a = inv * s1.as_matrix();
    let b = inv * s2.as_matrix();
    Ok((a * b).trace())
}

/// `½ tr(L_{X,M}(S₁) S₂)`.
pub fn gbw_inner(
    m: &SpdMatrix,
    x: &SpdMatrix,
    s1: &SymmetricMatrix,
    s2: &SymmetricMatrix,
) -> Result<f64> {
    check_dims(x.dim(), s2.dim())?;
    let l = generalized_lyapunov_solve(x, m, s1)?;
    Ok(0.5 * l.dot(s2))
}

/// Differential of `X ↦ X^θ` at `x` in direction `s`.
pub fn power_differential(x: &SpdMatrix, theta: f64, s: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    check_theta(theta)?;
    check_dims(x.dim(), s.dim())?;
    let d = spectral_derivative(x.eig(), MatrixFunction::Pow(theta), s.as_matrix());
    SymmetricMatrix::new(d)
}

/// Differential of the matrix logarithm at `x` in direction `s`.
pub fn log_differential(x: &SpdMatrix, s: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    check_dims(x.dim(), s.dim())?;
    let d = spectral_derivative(x.eig(), MatrixFunction::Log, s.as_matrix());
    SymmetricMatrix::new(d)
}

fn deformed(
    x: &SpdMatrix,
    theta: f64,
    s1: &SymmetricMatrix,
    s2: &SymmetricMatrix,
) -> Result<(SpdMatrix, SymmetricMatrix, SymmetricMatrix)> {
    check_theta(theta)?;
    let xt = x.map_spd(MatrixFunction::Pow(theta))?;
    let t1 = power_differential(x, theta, s1)?;
    let t2 = power_differential(x, theta, s2)?;
    Ok((xt, t1, t2))
}

/// `(1/θ²) g^GBW_{X^θ}(φ_θ*S₁, φ_θ*S₂)` with the GBW core anchored at `m`.
pub fn power_gbw_inner(
    m: &SpdMatrix,
    theta: f64,
    x: &SpdMatrix,
    s1: &SymmetricMatrix,
    s2: &SymmetricMatrix,
) -> Result<f64> {
    let (xt, t1, t2) = deformed(x, theta, s1, s2)?;
    Ok(gbw_inner(m, &xt, &t1, &t2)? / (theta * theta))
}

/// `(1/θ²) g^AI_{X^θ}(φ_θ*S₁, φ_θ*S₂)`.
pub fn power_ai_inner(
    theta: f64,
    x: &SpdMatrix,
    s1: &SymmetricMatrix,
    s2: &SymmetricMatrix,
) -> Result<f64> {
    let (xt, t1, t2) = deformed(x, theta, s1, s2)?;
    Ok(ai_inner(&xt, &t1, &t2)? / (theta * theta))
}

/// Limit of `power_gbw_inner` as `θ → 0`: the GBW metric at the identity applied to
/// log-differentials, `½ ⟨L_M(log_*S₁), log_*S₂⟩`.
pub fn deformation_limit_inner(
    m: &SpdMatrix,
    x: &SpdMatrix,
    s1: &SymmetricMatrix,
    s2: &SymmetricMatrix,
) -> Result<f64> {
    let l1 = log_differential(x, s1)?;
    let l2 = log_differential(x, s2)?;
    let lm = lyapunov_solve(m, &l1)?;
    Ok(0.5 * lm.dot(&l2))
}
