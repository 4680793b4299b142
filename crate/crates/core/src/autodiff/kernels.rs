//! Spectral operators `Y = U (K ⊙ UᵀSU) Uᵀ` whose kernel depends on eigenvalue sums,
//! `K[i, j] = g(λᵢ + λⱼ)`, and their reverse-mode rules in both `S` and `X`.
//!
//! The `X` adjoint uses the two-argument divided differences of the kernel:
//! `Ē[a, c] = Σ_b Ȳ'[a, b] S'[c, b] D(λa+λb, λc+λb)` plus the mirrored term, where
//! `D(u, v) = (g(u) - g(v)) / (u - v)`, then `X̄ = U sym(Ē) Uᵀ`.

use nalgebra::DMatrix;

use crate::linalg::{symmetrize, EigDecomposition};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SumKernel {
    /// `√(2 / (λᵢ + λⱼ))`: parallel transport from `X` to the identity.
    ToIdentity,
    /// `√((λᵢ + λⱼ) / 2)`: parallel transport from the identity to `X`.
    FromIdentity,
    /// `1 / (λᵢ + λⱼ)`: the Lyapunov solve.
    LyapunovInverse,
}

impl SumKernel {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            SumKernel::ToIdentity => (2.0 / u).sqrt(),
            SumKernel::FromIdentity => (0.5 * u).sqrt(),
            SumKernel::LyapunovInverse => 1.0 / u,
        }
    }

    /// `(g(u) - g(v)) / (u - v)` without cancellation, valid at `u = v`.
    pub fn divided_difference(self, u: f64, v: f64) -> f64 {
        match self {
            SumKernel::ToIdentity => {
                let (k1, k2) = ((0.5 * u).sqrt(), (0.5 * v).sqrt());
                -0.5 / (k1 * k2 * (k1 + k2))
            }
            SumKernel::FromIdentity => {
                let (k1, k2) = ((0.5 * u).sqrt(), (0.5 * v).sqrt());
                0.5 / (k1 + k2)
            }
            SumKernel::LyapunovInverse => -1.0 / (u * v),
        }
    }
}

fn kernel_matrix(eig: &EigDecomposition, kernel: SumKernel) -> DMatrix<f64> {
    let l = eig.values();
    DMatrix::from_fn(l.len(), l.len(), |i, j| kernel.apply(l[i] + l[j]))
}

pub fn kernel_forward(eig: &EigDecomposition, s: &DMatrix<f64>, kernel: SumKernel) -> DMatrix<f64> {
    symmetrize(&eig.spectral_hadamard(&symmetrize(s), |a, b| kernel.apply(a + b)))
}

/// Adjoints `(S̄, X̄)` of `Y = kernel_forward(eig(X), S)` for upstream `Ȳ`.
pub fn kernel_backward(
    eig: &EigDecomposition,
    s: &DMatrix<f64>,
    kernel: SumKernel,
    upstream: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let u = eig.vectors();
    let l = eig.values();
    let n = l.len();
    let gp = u.transpose() * symmetrize(upstream) * u;
    let sp = u.transpose() * symmetrize(s) * u;

    let gs = u * gp.component_mul(&kernel_matrix(eig, kernel)) * u.transpose();

    let mut e = DMatrix::zeros(n, n);
    for a in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for b in 0..n {
                // First-argument variation of K[a, b] along E[a, c].
                acc += gp[(a, b)] * sp[(c, b)] * kernel.divided_difference(l[a] + l[b], l[c] + l[b]);
                // Second-argument variation of K[b, c] along E[a, c] (with the upstream index
                // pair (b, c) and S'[b, a]).
                acc += gp[(b, c)] * sp[(b, a)] * kernel.divided_difference(l[b] + l[a], l[b] + l[c]);
            }
            e[(a, c)] = acc;
        }
    }
    let gx = u * symmetrize(&e) * u.transpose();
    (symmetrize(&gs), symmetrize(&gx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{random_spd, random_symmetric};
    use crate::linalg::{eigh, lyapunov_solve};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn divided_differences_match_quotients() {
        for k in [SumKernel::ToIdentity, SumKernel::FromIdentity, SumKernel::LyapunovInverse] {
            for (u, v) in [(1.0, 3.0), (0.2, 7.5), (10.0, 10.5)] {
                let naive = (k.apply(u) - k.apply(v)) / (u - v);
                assert!((k.divided_difference(u, v) - naive).abs() < 1e-12 * naive.abs());
            }
            let h = 1e-6;
            let deriv = (k.apply(2.0 + h) - k.apply(2.0 - h)) / (2.0 * h);
            assert!((k.divided_difference(2.0, 2.0) - deriv).abs() < 1e-8);
        }
    }

    #[test]
    fn inverse_kernel_is_the_lyapunov_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let x = random_spd(&mut rng, 5, 100.0);
        let s = random_symmetric(&mut rng, 5);
        let y = kernel_forward(x.eig(), s.as_matrix(), SumKernel::LyapunovInverse);
        let l = lyapunov_solve(&x, &s).unwrap();
        assert!((y - l.as_matrix()).norm() < 1e-12 * l.frobenius_norm());
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for kernel in [SumKernel::ToIdentity, SumKernel::FromIdentity, SumKernel::LyapunovInverse] {
            for _ in 0..5 {
                let x = random_spd(&mut rng, 4, 50.0);
                let s = random_symmetric(&mut rng, 4).into_matrix();
                let c = random_symmetric(&mut rng, 4).into_matrix();
                let dx = random_symmetric(&mut rng, 4).into_matrix();
                let ds = random_symmetric(&mut rng, 4).into_matrix();
                let f = |xm: &DMatrix<f64>, sm: &DMatrix<f64>| {
                    let e = eigh(xm).unwrap();
                    kernel_forward(&e, sm, kernel).dot(&c)
                };
                let h = 1e-5;
                let xm = x.as_matrix();
                let fd_x = (f(&(xm + &dx * h), &s) - f(&(xm - &dx * h), &s)) / (2.0 * h);
                let fd_s = (f(xm, &(&s + &ds * h)) - f(xm, &(&s - &ds * h))) / (2.0 * h);
                let (gs, gx) = kernel_backward(x.eig(), &s, kernel, &c);
                let (an_x, an_s) = (gx.dot(&dx), gs.dot(&ds));
                assert!((an_x - fd_x).abs() < 1e-5 * fd_x.abs().max(1e-8), "{kernel:?} X");
                assert!((an_s - fd_s).abs() < 1e-5 * fd_s.abs().max(1e-8), "{kernel:?} S");
            }
        }
    }
}
