//! Reverse-mode differentiation over a fixed set of matrix operations, and the
//! manifold optimizers that consume its gradients.

pub mod fd;
mod kernels;
mod optim;
mod tape;

pub use kernels::{kernel_backward, kernel_forward, SumKernel};
pub use optim::{bw_riemannian_gradient, rsgd_step, stiefel_step, MAX_HALVINGS};
pub use tape::{backward_eigen_function, backward_lyapunov, Gradient, NodeId, Tape, Value};
