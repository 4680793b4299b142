//! Seeded random matrices for tests, verification suites and synthetic data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::{SpdMatrix, SymmetricMatrix};

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian with the sign of `diag(R)` fixed).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    random_stiefel(rng, dim, dim)
}

/// Column-orthonormal `rows × cols` matrix, `cols ≤ rows`.
pub fn random_stiefel<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, rows, cols);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric matrix with standard normal entries on and above the diagonal.
pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> SymmetricMatrix {
    let g = gaussian_matrix(rng, dim, dim);
    let upper = DMatrix::from_fn(dim, dim, |i, j| if i <= j { g[(i, j)] } else { g[(j, i)] });
    SymmetricMatrix::new(upper).expect("square")
}

/// `Q diag(spectrum) Qᵀ` in a random orthonormal basis.
pub fn spd_with_spectrum<R: Rng + ?Sized>(rng: &mut R, spectrum: &[f64]) -> SpdMatrix {
    let q = random_orthogonal(rng, spectrum.len());
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum));
    SpdMatrix::from_matrix(&q * d * q.transpose()).expect("positive spectrum")
}

/// Random SPD matrix with condition number at most `kappa`, eigenvalues log-uniform
/// in `[kappa^{-1/2}, kappa^{1/2}]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize, kappa: f64) -> SpdMatrix {
    let half = 0.5 * kappa.max(1.0).ln();
    let spectrum: Vec<f64> = (0..dim).map(|_| rng.random_range(-half..=half).exp()).collect();
    spd_with_spectrum(rng, &spectrum)
}

/// Random SPD diagonal matrix with entries log-uniform in `[lo, hi]`.
pub fn random_diagonal_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize, lo: f64, hi: f64) -> SpdMatrix {
    let (a, b) = (lo.ln(), hi.ln());
    let diag: Vec<f64> = (0..dim).map(|_| rng.random_range(a..=b).exp()).collect();
    SpdMatrix::from_diagonal(&diag).expect("positive diagonal")
}
