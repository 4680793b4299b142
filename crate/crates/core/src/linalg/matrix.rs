use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::eigen::{eigh, symmetrize, EigDecomposition, MatrixFunction};
use crate::error::{Error, Result};

/// Relative eigenvalue floor for [`SpdMatrix`]: `λ_min ≥ 1e-14 · max(λ_max, 1)`.
pub const SPD_FLOOR_RTOL: f64 = 1e-14;

/// A real symmetric matrix; a tangent vector of the SPD manifold.
///
/// Construction symmetrizes the input, so `m[(i, j)] == m[(j, i)]` holds bitwise.
#[derive(Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::Precondition("matrix dimension must be >= 1".into()));
        }
        Ok(SymmetricMatrix(symmetrize(&m)))
    }

    /// Symmetrize a matrix that is already known to be square and nonempty.
    pub(crate) fn from_square(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square() && m.nrows() > 0);
        SymmetricMatrix(symmetrize(&m))
    }

    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_square(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_square(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_square(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn eigh(&self) -> Result<EigDecomposition> {
        eigh(&self.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Frobenius inner product `tr(A B)`.
    pub fn dot(&self, other: &SymmetricMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, c: f64) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 * c)
    }

    pub fn add(&self, other: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        check_dims(self.dim(), other.dim())?;
        Ok(SymmetricMatrix(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        check_dims(self.dim(), other.dim())?;
        Ok(SymmetricMatrix(&self.0 - &other.0))
    }

    /// `self + cI`.
    pub fn shift(&self, c: f64) -> SymmetricMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        SymmetricMatrix(m)
    }

    /// Apply a spectral function, checking its domain.
    pub fn map_spectrum(&self, f: MatrixFunction) -> Result<SymmetricMatrix> {
        let eig = self.eigh()?;
        if f.requires_positive() && eig.min_value() <= 0.0 {
            return Err(Error::out_of_domain(
                format!("{f:?} of a matrix with a nonpositive eigenvalue"),
                eig.min_value(),
            ));
        }
        Ok(SymmetricMatrix(eig.map(f)))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }
}

impl fmt::Debug for SymmetricMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricMatrix{}", self.0)
    }
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse("empty matrix".into()));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// A symmetric positive-definite matrix (a point of the manifold) with its
/// eigendecomposition. Values are immutable, so the decomposition never goes stale.
#[derive(Clone, PartialEq)]
pub struct SpdMatrix {
    base: SymmetricMatrix,
    eig: EigDecomposition,
}

impl SpdMatrix {
    /// Validate positive definiteness against the relative floor [`SPD_FLOOR_RTOL`].
    pub fn new(base: SymmetricMatrix) -> Result<Self> {
        let eig = base.eigh()?;
        let floor = SPD_FLOOR_RTOL * eig.max_value().max(1.0);
        let min = eig.min_value();
        if !(min >= floor) || !min.is_finite() {
            return Err(Error::NotPositiveDefinite {
                eigenvalue: min,
                floor,
            });
        }
        Ok(SpdMatrix { base, eig })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymmetricMatrix::new(m)?)
    }

    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        Self::new(SymmetricMatrix::from_row_slice(dim, entries)?)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(SymmetricMatrix::from_diagonal(diag))
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(SymmetricMatrix::identity(dim)).expect("identity is SPD")
    }

    /// `c · I`, `c > 0`.
    pub fn scalar(dim: usize, c: f64) -> Result<Self> {
        Self::new(SymmetricMatrix::identity(dim).scale(c))
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn sym(&self) -> &SymmetricMatrix {
        &self.base
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.base.as_matrix()
    }

    pub fn eig(&self) -> &EigDecomposition {
        &self.eig
    }

    pub fn trace(&self) -> f64 {
        self.base.trace()
    }

    /// `U f(Λ) Uᵀ` from the cached decomposition.
    pub fn map(&self, f: MatrixFunction) -> SymmetricMatrix {
        SymmetricMatrix(self.eig.map(f))
    }

    /// `f(X)` re-validated as SPD; fails only if `f` lands below the floor.
    pub fn map_spd(&self, f: MatrixFunction) -> Result<SpdMatrix> {
        SpdMatrix::new(self.map(f))
    }

    pub fn sqrt(&self) -> SymmetricMatrix {
        self.map(MatrixFunction::Sqrt)
    }

    pub fn inv_sqrt(&self) -> SymmetricMatrix {
        self.map(MatrixFunction::InvSqrt)
    }

    pub fn inverse(&self) -> SymmetricMatrix {
        self.map(MatrixFunction::Pow(-1.0))
    }

    pub fn pow(&self, theta: f64) -> SymmetricMatrix {
        self.map(MatrixFunction::Pow(theta))
    }

    pub fn log(&self) -> SymmetricMatrix {
        self.map(MatrixFunction::Log)
    }

    /// True when the matrix is a multiple of the identity up to rounding.
    pub fn is_scalar(&self) -> bool {
        let spread = self.eig.max_value() - self.eig.min_value();
        spread <= 1e-14 * self.eig.max_value().abs()
    }

    /// `Aᵀ X A`, SPD whenever `A` has full column rank.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Result<SpdMatrix> {
        check_dims(self.dim(), a.nrows())?;
        SpdMatrix::from_matrix(a.transpose() * self.as_matrix() * a)
    }
}

impl fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpdMatrix{}", self.as_matrix())
    }
}

impl From<SpdMatrix> for SymmetricMatrix {
    fn from(x: SpdMatrix) -> Self {
        x.base
    }
}

impl Serialize for SymmetricMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SymmetricMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        rows_to_matrix(&rows)
            .and_then(SymmetricMatrix::new)
            .map_err(serde::de::Error::custom)
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.base.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let base = SymmetricMatrix::deserialize(deserializer)?;
        SpdMatrix::new(base).map_err(serde::de::Error::custom)
    }
}
