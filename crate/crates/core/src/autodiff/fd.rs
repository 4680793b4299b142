//! Central finite differences used as gradient oracles.

use nalgebra::DMatrix;

use crate::error::Result;

/// `(f(x + hE) - f(x - hE)) / 2h`.
pub fn central_difference(
    f: impl Fn(&DMatrix<f64>) -> Result<f64>,
    x: &DMatrix<f64>,
    direction: &DMatrix<f64>,
    h: f64,
) -> Result<f64> {
    let plus = f(&(x + direction * h))?;
    let minus = f(&(x - direction * h))?;
    Ok((plus - minus) / (2.0 * h))
}

/// Scalar version of [`central_difference`].
pub fn central_difference_scalar(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
