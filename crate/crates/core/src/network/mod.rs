//! A small SPDNet-style classifier (BiMap, GBWBN, ReEig, LogEig, affine head) and its
//! training loop.

mod model;
mod train;

pub use model::{Batch, Model, ModelCheckpoint, ParamCheckpoint, ParamGrad, Params, StepResult};
pub use train::{train, train_model, train_model_observed, Dataset, EpochMetrics, TrainConfig, TrainOutcome};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::batchnorm::GbwbnConfig;
use crate::error::{Error, Result};
use crate::linalg::{check_dims, MatrixFunction, SpdMatrix};

pub const DEFAULT_REEIG_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    BiMap { d_in: usize, d_out: usize },
    Gbwbn(GbwbnConfig),
    ReEig { eps: f64 },
    LogEig,
    Classifier { num_classes: usize },
}

/// Ordered layer list with the input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl LayerSpec {
    /// `{d₀, …, d_L}`: a BiMap per consecutive pair, each followed by GBWBN (when
    /// configured) and ReEig, then LogEig and the classifier.
    pub fn spdnet(dims: &[usize], bn: Option<GbwbnConfig>, num_classes: usize) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("architecture needs at least two dimensions".into()));
        }
        let mut layers = Vec::new();
        for pair in dims.windows(2) {
            layers.push(Layer::BiMap {
                d_in: pair[0],
                d_out: pair[1],
            });
            if let Some(cfg) = &bn {
                layers.push(Layer::Gbwbn(cfg.clone()));
            }
            layers.push(Layer::ReEig {
                eps: DEFAULT_REEIG_EPS,
            });
        }
        layers.push(Layer::LogEig);
        layers.push(Layer::Classifier { num_classes });
        let spec = LayerSpec {
            input_dim: dims[0],
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the dimension chain and returns the SPD dimension entering LogEig.
    pub fn validate(&self) -> Result<usize> {
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut dim = self.input_dim;
        let mut logeig = false;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            if logeig && !matches!(layer, Layer::Classifier { .. }) {
                return Err(Error::Config(format!("layer {i}: only the classifier may follow LogEig")));
            }
            match layer {
                Layer::BiMap { d_in, d_out } => {
                    if *d_in != dim {
                        return Err(Error::Config(format!(
                            "layer {i}: BiMap expects {d_in} inputs but receives {dim}"
                        )));
                    }
                    if *d_out == 0 || d_out > d_in {
                        return Err(Error::Config(format!(
                            "layer {i}: BiMap output {d_out} must be in 1..={d_in}"
                        )));
                    }
                    dim = *d_out;
                }
                Layer::Gbwbn(cfg) => cfg.validate()?,
                Layer::ReEig { eps } => {
                    if !(*eps > 0.0) || !eps.is_finite() {
                        return Err(Error::Config(format!("layer {i}: ReEig eps must be positive")));
                    }
                }
                Layer::LogEig => logeig = true,
                Layer::Classifier { num_classes } => {
                    if !logeig {
                        return Err(Error::Config(format!("layer {i}: classifier requires LogEig first")));
                    }
                    if i + 1 != n {
                        return Err(Error::Config(format!("layer {i}: classifier must be last")));
                    }
                    if *num_classes < 2 {
                        return Err(Error::Config("classifier needs at least two classes".into()));
                    }
                }
            }
        }
        if !matches!(self.layers.last(), Some(Layer::Classifier { .. })) {
            return Err(Error::Config("layer list must end with a classifier".into()));
        }
        Ok(dim)
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Classifier { num_classes }) => *num_classes,
            _ => 0,
        }
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Gbwbn(_)))
    }
}

/// `WᵀXW`.
pub fn bimap_forward(w: &DMatrix<f64>, x: &SpdMatrix) -> Result<SpdMatrix> {
    check_dims(x.dim(), w.nrows())?;
    x.congruence(w).map_err(|e| e.with_context("BiMap"))
}

/// `U max(Λ, ε) Uᵀ`.
pub fn reeig_forward(x: &SpdMatrix, eps: f64) -> SpdMatrix {
    x.map_spd(MatrixFunction::ReluFloor(eps))
        .expect("rectified spectrum is positive")
}

/// Upper triangle of a symmetric matrix, row by row, off-diagonal entries times `√2`,
/// so the Euclidean norm equals the Frobenius norm.
pub fn vectorize_symmetric(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut v = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
            v.push(w * m[(i, j)]);
        }
    }
    v
}

/// Symmetric adjoint of [`vectorize_symmetric`]: the matrix `G` with
/// `⟨G, dL⟩ = ⟨g, vectorize(dL)⟩` for every symmetric `dL`.
pub fn vectorize_adjoint(g: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            if i == j {
                m[(i, i)] = g[k];
            } else {
                let v = g[k] / std::f64::consts::SQRT_2;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            k += 1;
        }
    }
    m
}

/// `vectorize(log X)`.
pub fn logeig_vectorize(x: &SpdMatrix) -> Vec<f64> {
    vectorize_symmetric(x.log().as_matrix())
}
