//! Symmetric and SPD matrix types, spectral functions and Lyapunov solvers.

mod eigen;
pub mod io;
mod matrix;
mod ops;
pub mod random;

pub use eigen::{eigh, spectral_derivative, EigDecomposition, MatrixFunction, NEAR_EQUAL_RTOL};
pub(crate) use eigen::symmetrize;
pub use matrix::{SpdMatrix, SymmetricMatrix, SPD_FLOOR_RTOL};
pub(crate) use matrix::{check_dims, matrix_to_rows, rows_to_matrix};
pub use ops::{
    condition_number, generalized_lyapunov_solve, lyapunov_solve, matrix_function, product_sqrt,
    rel_frobenius, regularize,
};
