//! Riemannian geometry of SPD matrices under the Bures-Wasserstein (BW) and generalized
//! BW metrics, and a batch-normalization layer built on it.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod batchnorm;
pub mod error;
pub mod frechet;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod oracle;

pub use error::{Error, Result};
pub use linalg::{EigDecomposition, MatrixFunction, SpdMatrix, SymmetricMatrix};
pub use metrics::MetricTag;
