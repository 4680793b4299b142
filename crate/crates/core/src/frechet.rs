//! Weighted Fréchet means and variance under the BW metric.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dims, product_sqrt, SpdMatrix};
use crate::metrics::{bw_distance, bw_distance_sq, check_theta};

/// Convergence tolerance on the BW step length of the fixed-point iteration.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Nonnegative weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Precondition("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Precondition(format!("negative or non-finite weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!("weights sum to {total}, not 1")));
        }
        Ok(WeightVector(weights))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Precondition("empty weight vector".into()));
        }
        Ok(WeightVector(vec![1.0 / n as f64; n]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Precondition(format!("weight {omega} outside [0, 1]")));
    }
    Ok(())
}

/// Point at parameter `ω` on the geodesic from `x1` to `x2`:
/// `(1-ω)² X₁ + ω² X₂ + ω(1-ω)((X₂X₁)^{1/2} + (X₁X₂)^{1/2})`.
pub fn two_point_mean(x1: &SpdMatrix, x2: &SpdMatrix, omega: f64) -> Result<SpdMatrix> {
    check_omega(omega)?;
    check_dims(x1.dim(), x2.dim())?;
    if omega == 0.0 {
        return Ok(x1.clone());
    }
    if omega == 1.0 {
        return Ok(x2.clone());
    }
    let p = product_sqrt(x1, x2)?;
    let a = 1.0 - omega;
    let m = x1.as_matrix() * (a * a)
        + x2.as_matrix() * (omega * omega)
        + (&p + p.transpose()) * (omega * a);
    SpdMatrix::from_matrix(m).map_err(|e| e.with_context("two_point_mean"))
}

/// Fixed-order pairwise summation, so results do not depend on thread scheduling.
pub(crate) fn pairwise_sum(terms: &[DMatrix<f64>]) -> DMatrix<f64> {
    match terms.len() {
        0 => panic!("pairwise_sum of an empty slice"),
        1 => terms[0].clone(),
        n => {
            let (lo, hi) = terms.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

fn check_batch(batch: &[SpdMatrix], weights: &WeightVector) -> Result<usize> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Precondition("empty batch".into()))?;
    if weights.len() != batch.len() {
        return Err(Error::Precondition(format!(
            "{} weights for {} matrices",
            weights.len(),
            batch.len()
        )));
    }
    for x in batch {
        check_dims(first.dim(), x.dim())?;
    }
    Ok(first.dim())
}

/// `Σ ωᵢ Xᵢ`.
pub fn arithmetic_mean(batch: &[SpdMatrix], weights: &WeightVector) -> Result<SpdMatrix> {
    check_batch(batch, weights)?;
    let terms: Vec<DMatrix<f64>> = batch
        .iter()
        .zip(weights.as_slice())
        .map(|(x, w)| x.as_matrix() * *w)
        .collect();
    SpdMatrix::from_matrix(pairwise_sum(&terms)).map_err(|e| e.with_context("arithmetic mean"))
}

/// `Σ ωᵢ (G^{1/2} Xᵢ G^{1/2})^{1/2}`, the right-hand side of the Karcher equation.
fn karcher_sum(batch: &[SpdMatrix], weights: &WeightVector, g: &SpdMatrix) -> Result<DMatrix<f64>> {
    let gs = g.sqrt();
    let gs = gs.as_matrix();
    let terms = batch
        .iter()
        .zip(weights.as_slice())
        .map(|(x, w)| {
            let inner = SpdMatrix::from_matrix(gs * x.as_matrix() * gs)?;
            Ok(inner.sqrt().into_matrix() * *w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&terms))
}

/// One fixed-point step `H(G) = G^{-1/2} (Σ ωᵢ (G^{1/2} Xᵢ G^{1/2})^{1/2})² G^{-1/2}`.
pub fn fixed_point_step(
    batch: &[SpdMatrix],
    weights: &WeightVector,
    g: &SpdMatrix,
) -> Result<SpdMatrix> {
    check_batch(batch, weights)?;
    let s = karcher_sum(batch, weights, g)?;
    let gis = g.inv_sqrt();
    let gis = gis.as_matrix();
    SpdMatrix::from_matrix(gis * &s * &s * gis)
}

/// Relative Frobenius residual `‖G - Σ ωᵢ (G^{1/2} Xᵢ G^{1/2})^{1/2}‖ / ‖G‖`.
pub fn karcher_residual(batch: &[SpdMatrix], weights: &WeightVector, g: &SpdMatrix) -> Result<f64> {
    check_batch(batch, weights)?;
    let s = karcher_sum(batch, weights, g)?;
    Ok((g.as_matrix() - s).norm() / g.as_matrix().norm())
}

#[derive(Clone, Debug)]
pub struct MeanEstimate {
    pub mean: SpdMatrix,
    pub iterations: usize,
    /// Whether the last step moved less than `tol`.
    pub converged: bool,
    pub last_step: f64,
}

/// Fixed-point iteration from the arithmetic mean, stopping after `iters` steps or once a
/// step moves less than `tol` in BW distance.
pub fn frechet_mean_report(
    batch: &[SpdMatrix],
    weights: &WeightVector,
    iters: usize,
    tol: f64,
) -> Result<MeanEstimate> {
    if iters == 0 {
        return Err(Error::Precondition("frechet_mean needs at least one iteration".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::Precondition(format!("tolerance must be nonnegative, got {tol}")));
    }
    let mut g = arithmetic_mean(batch, weights)?;
    let mut last_step = f64::INFINITY;
    for it in 0..iters {
        let next = fixed_point_step(batch, weights, &g)
            .map_err(|e| e.with_context(&format!("frechet_mean iteration {it}")))?;
        last_step = bw_distance(&next, &g)?;
        g = next;
        if last_step < tol {
            return Ok(MeanEstimate {
                mean: g,
                iterations: it + 1,
                converged: true,
                last_step,
            });
        }
    }
    Ok(MeanEstimate {
        mean: g,
        iterations: iters,
        converged: false,
        last_step,
    })
}

pub fn frechet_mean(
    batch: &[SpdMatrix],
    weights: &WeightVector,
    iters: usize,
    tol: f64,
) -> Result<SpdMatrix> {
    frechet_mean_report(batch, weights, iters, tol).map(|r| r.mean)
}

/// `(1/N) Σ (1/θ²) d²_BW(mean, Xᵢ)`.
pub fn frechet_variance(batch: &[SpdMatrix], mean: &SpdMatrix, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let mut total = 0.0;
    for x in batch {
        total += bw_distance_sq(mean, x)?;
    }
    Ok(total / batch.len() as f64 / (theta * theta))
}

/// Running mean and variance of a normalization layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: SpdMatrix,
    pub var: f64,
}

impl RunningStats {
    pub fn identity(dim: usize) -> Self {
        RunningStats {
            mean: SpdMatrix::identity(dim),
            var: 1.0,
        }
    }
}

/// `ℬ_r ← two_point_mean(ℬ_r, ℬ_b, ω)`, `ν²_r ← (1-ω) ν²_r + ω ν²_b`.
pub fn update_running_stats(
    running: &RunningStats,
    batch_mean: &SpdMatrix,
    batch_var: f64,
    momentum: f64,
) -> Result<RunningStats> {
    check_omega(momentum)?;
    Ok(RunningStats {
        mean: two_point_mean(&running.mean, batch_mean, momentum)?,
        var: (1.0 - momentum) * running.var + momentum * batch_var,
    })
}
