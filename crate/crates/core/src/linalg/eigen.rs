//! Symmetric eigendecomposition and spectral matrix functions.
//!
//! Every matrix function in the crate (square root, power, logarithm, rectification, ...)
//! goes through [`EigDecomposition::map`], and every derivative of one goes through
//! [`MatrixFunction::divided_difference`]. Keeping both in one place means the forward
//! value and the Daleckii-Krein backward rule can never disagree about the spectrum.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Two eigenvalues closer than this (relative to `max(|a|, |b|, 1)`) share the
/// derivative branch of the divided-difference table.
pub const NEAR_EQUAL_RTOL: f64 = 1e-12;

/// Orthonormal eigenvectors (columns) and eigenvalues sorted in descending order.
///
/// Each eigenvector's first component whose magnitude exceeds `1e-12` is positive, so two
/// decompositions of the same matrix agree whenever the spectrum is simple.
#[derive(Clone, Debug, PartialEq)]
pub struct EigDecomposition {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl EigDecomposition {
    /// Build from raw parts, normalizing order and signs.
    pub fn from_parts(vectors: DMatrix<f64>, values: DVector<f64>) -> Self {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

        let mut sorted_vectors = DMatrix::zeros(n, n);
        let mut sorted_values = DVector::zeros(n);
        for (dst, &src) in order.iter().enumerate() {
            sorted_values[dst] = values[src];
            let mut column = vectors.column(src).clone_owned();
            if let Some(lead) = column.iter().copied().find(|v| v.abs() > 1e-12) {
                if lead < 0.0 {
                    column.neg_mut();
                }
            }
            sorted_vectors.set_column(dst, &column);
        }
        EigDecomposition {
            vectors: sorted_vectors,
            values: sorted_values,
        }
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `U diag(values) Uᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.with_values(self.values.iter().copied())
    }

    /// `U diag(f(λ)) Uᵀ`, symmetrized.
    pub fn map(&self, f: MatrixFunction) -> DMatrix<f64> {
        self.with_values(self.values.iter().map(|&v| f.apply(v)))
    }

    fn with_values(&self, new_values: impl Iterator<Item = f64>) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, v) in new_values.enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        let out = scaled * self.vectors.transpose();
        symmetrize(&out)
    }

    /// `U (K ⊙ UᵀSU) Uᵀ` with `K[i, j] = kernel(λᵢ, λⱼ)`.
    pub fn spectral_hadamard(
        &self,
        s: &DMatrix<f64>,
        kernel: impl Fn(f64, f64) -> f64,
    ) -> DMatrix<f64> {
        let u = &self.vectors;
        let mut rotated = u.transpose() * s * u;
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                rotated[(i, j)] *= kernel(self.values[i], self.values[j]);
            }
        }
        u * rotated * u.transpose()
    }
}

/// Symmetric eigendecomposition, sorted descending.
///
/// The input is symmetrized first. Backed by nalgebra's implicit QR iteration.
pub fn eigh(m: &DMatrix<f64>) -> Result<EigDecomposition> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "eigh",
            format!("non-finite input (norm {})", m.norm()),
        ));
    }
    let n = m.nrows();
    let sym = symmetrize(m);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 1000 * n.max(1)).ok_or_else(|| {
        Error::numerical(
            "eigh",
            format!("eigensolver did not converge (input norm {:e})", m.norm()),
        )
    })?;
    Ok(EigDecomposition::from_parts(eig.eigenvectors, eig.eigenvalues))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Scalar functions applied to the spectrum of a symmetric matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MatrixFunction {
    Sqrt,
    InvSqrt,
    /// `λ^θ` for any real `θ`.
    Pow(f64),
    Log,
    Exp,
    /// `max(λ, ε)`, the ReEig rectifier.
    ReluFloor(f64),
    /// `|λ|`, the square root of `A²` for invertible symmetric `A`.
    Abs,
}

impl MatrixFunction {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            MatrixFunction::Sqrt => x.sqrt(),
            MatrixFunction::InvSqrt => 1.0 / x.sqrt(),
            MatrixFunction::Pow(theta) => x.powf(theta),
            MatrixFunction::Log => x.ln(),
            MatrixFunction::Exp => x.exp(),
            MatrixFunction::ReluFloor(eps) => x.max(eps),
            MatrixFunction::Abs => x.abs(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            MatrixFunction::Sqrt => 0.5 / x.sqrt(),
            MatrixFunction::InvSqrt => -0.5 / (x * x.sqrt()),
            MatrixFunction::Pow(theta) => theta * x.powf(theta - 1.0),
            MatrixFunction::Log => 1.0 / x,
            MatrixFunction::Exp => x.exp(),
            MatrixFunction::ReluFloor(eps) => {
                if x > eps {
                    1.0
                } else {
                    0.0
                }
            }
            MatrixFunction::Abs if x == 0.0 => 0.0,
            MatrixFunction::Abs => x.signum(),
        }
    }

    /// Whether the function is only defined for strictly positive arguments.
    pub fn requires_positive(self) -> bool {
        match self {
            MatrixFunction::Sqrt | MatrixFunction::InvSqrt | MatrixFunction::Log => true,
            MatrixFunction::Pow(theta) => theta.fract() != 0.0 || theta < 0.0,
            MatrixFunction::Exp | MatrixFunction::ReluFloor(_) | MatrixFunction::Abs => false,
        }
    }

    /// First divided difference `(f(a) - f(b)) / (a - b)`, or `f'(a)` when `a ≈ b`.
    ///
    /// Closed forms avoid the cancellation of the naive quotient for close arguments.
    pub fn divided_difference(self, a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs()).max(1.0);
        if (a - b).abs() < NEAR_EQUAL_RTOL * scale {
            return self.derivative(a);
        }
        match self {
            MatrixFunction::Sqrt => 1.0 / (a.sqrt() + b.sqrt()),
            MatrixFunction::InvSqrt => {
                let (ra, rb) = (a.sqrt(), b.sqrt());
                -1.0 / (ra * rb * (ra + rb))
            }
            MatrixFunction::Pow(theta) => {
                if a <= 0.0 || b <= 0.0 {
                    return (a.powf(theta) - b.powf(theta)) / (a - b);
                }
                // b^(θ-1) (r^θ - 1) / (r - 1) with r = a / b.
                let q = (a - b) / b;
                b.powf(theta - 1.0) * (theta * q.ln_1p()).exp_m1() / q
            }
            MatrixFunction::Log => ((a - b) / b).ln_1p() / (a - b),
            MatrixFunction::Exp => b.exp() * (a - b).exp_m1() / (a - b),
            MatrixFunction::ReluFloor(eps) => (a.max(eps) - b.max(eps)) / (a - b),
            MatrixFunction::Abs if (a > 0.0) == (b > 0.0) => a.signum(),
            MatrixFunction::Abs => (a.abs() - b.abs()) / (a - b),
        }
    }

    /// Matrix of first divided differences over a spectrum.
    pub fn divided_difference_matrix(self, values: &DVector<f64>) -> DMatrix<f64> {
        let n = values.len();
        DMatrix::from_fn(n, n, |i, j| self.divided_difference(values[i], values[j]))
    }
}

/// Fréchet derivative of a spectral function at `eig` applied to the direction `s`:
/// `U (F ⊙ UᵀSU) Uᵀ` with `F` the divided-difference matrix. The map is self-adjoint,
/// so the same routine is the Daleckii-Krein backward rule.
pub fn spectral_derivative(
    eig: &EigDecomposition,
    f: MatrixFunction,
    s: &DMatrix<f64>,
) -> DMatrix<f64> {
    let fdd = f.divided_difference_matrix(eig.values());
    let u = eig.vectors();
    let mut rotated = u.transpose() * s * u;
    rotated.component_mul_assign(&fdd);
    u * rotated * u.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn diagonal_input_is_sorted_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let e = eigh(&m).unwrap();
        assert_eq!(e.values().as_slice(), &[2.0, 1.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((e.vectors() - expected).norm() < 1e-15);
    }

    #[test]
    fn two_by_two_by_hand() {
        // det([[2-λ,1],[1,2-λ]]) = (2-λ)² - 1 → λ ∈ {3, 1}.
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = eigh(&m).unwrap();
        assert!(close(e.values()[0], 3.0, 1e-14));
        assert!(close(e.values()[1], 1.0, 1e-14));
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vectors().column(0);
        let v1 = e.vectors().column(1);
        assert!((v0[0] - r).abs() < 1e-14 && (v0[1] - r).abs() < 1e-14);
        assert!((v1[0] - r).abs() < 1e-14 && (v1[1] + r).abs() < 1e-14);
    }

    #[test]
    fn identity_reconstructs() {
        let m = DMatrix::<f64>::identity(3, 3);
        let e = eigh(&m).unwrap();
        assert!(e.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!((e.reconstruct() - m).norm() < 1e-14);
    }

    #[test]
    fn non_finite_input_is_a_numerical_error() {
        let m = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(matches!(eigh(&m), Err(Error::Numerical { .. })));
    }

    #[test]
    fn divided_differences_match_naive_quotient_away_from_diagonal() {
        let fs = [
            MatrixFunction::Sqrt,
            MatrixFunction::InvSqrt,
            MatrixFunction::Pow(0.5),
            MatrixFunction::Pow(-1.3),
            MatrixFunction::Pow(2.0),
            MatrixFunction::Log,
            MatrixFunction::Exp,
            MatrixFunction::ReluFloor(0.5),
            MatrixFunction::Abs,
        ];
        for f in fs {
            for (a, b) in [(1.0, 4.0), (0.3, 2.5), (7.0, 0.1)] {
                let naive = (f.apply(a) - f.apply(b)) / (a - b);
                assert!(close(f.divided_difference(a, b), naive, 1e-13), "{f:?} {a} {b}");
            }
        }
    }

    #[test]
    fn abs_divided_difference_across_zero() {
        for (a, b) in [(-1.0f64, 3.0f64), (2.0, -0.5), (-2.0, -0.25), (0.0, 1.0)] {
            let naive = (a.abs() - b.abs()) / (a - b);
            assert!(close(MatrixFunction::Abs.divided_difference(a, b), naive, 1e-15), "{a} {b}");
        }
    }

    #[test]
    fn divided_differences_are_continuous_at_the_diagonal() {
        let fs = [
            MatrixFunction::Sqrt,
            MatrixFunction::InvSqrt,
            MatrixFunction::Pow(0.25),
            MatrixFunction::Log,
            MatrixFunction::Exp,
        ];
        for f in fs {
            for a in [0.01, 1.0, 30.0] {
                let near = f.divided_difference(a, a * (1.0 + 1e-10));
                assert!(close(near, f.derivative(a), 1e-8), "{f:?} {a}");
                assert_eq!(f.divided_difference(a, a), f.derivative(a));
            }
        }
    }
}
