//! Dense vectorized reference forms of the metrics, `O(d⁶)`.
//!
//! These solve the Kronecker-sum linear systems directly and exist to cross-check the
//! eigenbasis fast paths. They refuse dimensions above [`MAX_ORACLE_DIM`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_dims, SpdMatrix, SymmetricMatrix};

pub const MAX_ORACLE_DIM: usize = 6;

fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

fn check_small(d: usize) -> Result<()> {
    if d > MAX_ORACLE_DIM {
        return Err(Error::Precondition(format!(
            "dense oracle limited to d <= {MAX_ORACLE_DIM}, got {d}"
        )));
    }
    Ok(())
}

/// `vec(S₁)ᵀ K⁻¹ vec(S₂)` for a dense `d² × d²` operator `K`.
fn quadratic(k: DMatrix<f64>, s1: &SymmetricMatrix, s2: &SymmetricMatrix) -> Result<f64> {
    let rhs = vec(s2.as_matrix());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("oracle", "singular Kronecker operator"))?;
    Ok(vec(s1.as_matrix()).dot(&sol))
}

/// `½ vec(S₁)ᵀ (X ⊕ X)⁻¹ vec(S₂)` with `X ⊕ X = X ⊗ I + I ⊗ X`.
pub fn bw_inner_kron(x: &SpdMatrix, s1: &SymmetricMatrix, s2: &SymmetricMatrix) -> Result<f64> {
    gbw_inner_kron(&SpdMatrix::identity(x.dim()), x, s1, s2)
}

/// `½ vec(S₁)ᵀ (X ⊗ M + M ⊗ X)⁻¹ vec(S₂)`.
pub fn gbw_inner_kron(
    m: &SpdMatrix,
    x: &SpdMatrix,
    s1: &SymmetricMatrix,
    s2: &SymmetricMatrix,
) -> Result<f64> {
    let d = x.dim();
    check_small(d)?;
    check_dims(d, m.dim())?;
    check_dims(d, s1.dim())?;
    check_dims(d, s2.dim())?;
    let (xm, mm) = (x.as_matrix(), m.as_matrix());
    let k = kron(xm, mm) + kron(mm, xm);
    Ok(0.5 * quadratic(k, s1, s2)?)
}

/// `vec(S₁)ᵀ (X ⊗ X)⁻¹ vec(S₂)`.
pub fn ai_inner_kron(x: &SpdMatrix, s1: &SymmetricMatrix, s2: &SymmetricMatrix) -> Result<f64> {
    let d = x.dim();
    check_small(d)?;
    check_dims(d, s1.dim())?;
    check_dims(d, s2.dim())?;
    quadratic(kron(x.as_matrix(), x.as_matrix()), s1, s2)
}

/// Solve `X L + L X = S` through the `d² × d²` Kronecker system.
pub fn lyapunov_kron(x: &SpdMatrix, s: &SymmetricMatrix) -> Result<DMatrix<f64>> {
    let d = x.dim();
    check_small(d)?;
    check_dims(d, s.dim())?;
    let i = DMatrix::identity(d, d);
    let k = kron(&i, x.as_matrix()) + kron(x.as_matrix(), &i);
    let sol = k
        .lu()
        .solve(&vec(s.as_matrix()))
        .ok_or_else(|| Error::numerical("oracle", "singular Kronecker operator"))?;
    Ok(DMatrix::from_column_slice(d, d, sol.as_slice()))
}
