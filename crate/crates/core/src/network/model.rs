use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bimap_forward, reeig_forward, vectorize_adjoint, vectorize_symmetric, Layer, LayerSpec};
use crate::autodiff::{rsgd_step, stiefel_step, NodeId, Tape, Value};
use crate::batchnorm::{gbwbn_tape, BatchStats, GbwbnParams, GbwbnState, Mode};
use crate::error::{Error, Result};
use crate::linalg::io::write_atomic;
use crate::linalg::random::random_stiefel;
use crate::linalg::{matrix_to_rows, rows_to_matrix, MatrixFunction, SpdMatrix};

/// Parameters of one layer.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Params {
    BiMap(DMatrix<f64>),
    Gbwbn(GbwbnState),
    Stateless,
    /// `logits = weight · features + bias`.
    Classifier {
        weight: DMatrix<f64>,
        bias: DVector<f64>,
    },
}

/// Gradients matching [`Params`] layer by layer.
#[derive(Clone, Debug)]
pub enum ParamGrad {
    BiMap(DMatrix<f64>),
    Gbwbn {
        m: DMatrix<f64>,
        bias: DMatrix<f64>,
        scale: f64,
    },
    Stateless,
    Classifier {
        weight: DMatrix<f64>,
        bias: DVector<f64>,
    },
}

/// Inputs with class labels.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub inputs: &'a [SpdMatrix],
    pub labels: &'a [usize],
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: LayerSpec,
    params: Vec<Params>,
}

/// Result of a differentiated training-mode pass over one batch.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub loss: f64,
    pub correct: usize,
    pub grads: Vec<ParamGrad>,
    pub stats: Vec<Option<BatchStats>>,
}

enum LeafIds {
    BiMap(NodeId),
    Gbwbn(GbwbnParams),
    None,
}

fn feature_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Mean cross-entropy of softmax logits, the number of correct argmax predictions, and the
/// gradients of the mean loss with respect to each logit vector.
fn cross_entropy(logits: &[DVector<f64>], labels: &[usize]) -> (f64, usize, Vec<DVector<f64>>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        let zmax = z.max();
        let shifted = z.map(|v| (v - zmax).exp());
        let total = shifted.sum();
        loss += total.ln() + zmax - z[y];
        let mut g = shifted / total;
        if argmax(z) == y {
            correct += 1;
        }
        g[y] -= 1.0;
        grads.push(g / n);
    }
    (loss / n, correct, grads)
}

fn argmax(z: &DVector<f64>) -> usize {
    // First maximal index, so ties (e.g. a zero-initialised head) resolve deterministically.
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// BiMap weights from the QR of a seeded Gaussian, zero classifier, GBWBN at
    /// `M = 𝒢 = I`, `s = 1`.
    pub fn new<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        let last_dim = spec.validate()?;
        let mut dim = spec.input_dim;
        let mut params = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            params.push(match layer {
                Layer::BiMap { d_in, d_out } => {
                    dim = *d_out;
                    Params::BiMap(random_stiefel(rng, *d_in, *d_out))
                }
                Layer::Gbwbn(cfg) => Params::Gbwbn(GbwbnState::new(dim, cfg.clone())?),
                Layer::ReEig { .. } | Layer::LogEig => Params::Stateless,
                Layer::Classifier { num_classes } => Params::Classifier {
                    weight: DMatrix::zeros(*num_classes, feature_dim(last_dim)),
                    bias: DVector::zeros(*num_classes),
                },
            });
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Params] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Params] {
        &mut self.params
    }

    fn check_inputs(&self, inputs: &[SpdMatrix]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        for x in inputs {
            if x.dim() != self.spec.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.spec.input_dim,
                    found: x.dim(),
                });
            }
        }
        Ok(())
    }

    fn check_labels(&self, batch: &Batch) -> Result<()> {
        self.check_inputs(batch.inputs)?;
        if batch.labels.len() != batch.inputs.len() {
            return Err(Error::Precondition(format!(
                "{} labels for {} inputs",
                batch.labels.len(),
                batch.inputs.len()
            )));
        }
        let k = self.spec.num_classes();
        if let Some(bad) = batch.labels.iter().find(|&&y| y >= k) {
            return Err(Error::Precondition(format!("label {bad} outside 0..{k}")));
        }
        Ok(())
    }

    /// Class logits without autodiff. `train` selects batch (true) or running (false)
    /// statistics in the normalization layers.
    pub fn logits(&self, inputs: &[SpdMatrix], train: bool) -> Result<Vec<DVector<f64>>> {
        self.check_inputs(inputs)?;
        let mut xs: Vec<SpdMatrix> = inputs.to_vec();
        let mut features: Vec<Vec<f64>> = Vec::new();
        for (i, (layer, p)) in self.spec.layers.iter().zip(&self.params).enumerate() {
            let at = |e: Error| e.with_context(&format!("layer {i}"));
            match (layer, p) {
                (Layer::BiMap { .. }, Params::BiMap(w)) => {
                    xs = xs.iter().map(|x| bimap_forward(w, x)).collect::<Result<_>>().map_err(at)?;
                }
                (Layer::Gbwbn(_), Params::Gbwbn(state)) => {
                    let mut st = state.clone();
                    st.set_mode(if train { Mode::Train } else { Mode::Eval });
                    xs = st.forward_pure(&xs).map_err(at)?.0;
                }
                (Layer::ReEig { eps }, _) => xs = xs.iter().map(|x| reeig_forward(x, *eps)).collect(),
                (Layer::LogEig, _) => {
                    features = xs.iter().map(|x| vectorize_symmetric(x.log().as_matrix())).collect();
                }
                (Layer::Classifier { .. }, Params::Classifier { weight, bias }) => {
                    return Ok(features
                        .iter()
                        .map(|v| weight * DVector::from_column_slice(v) + bias)
                        .collect());
                }
                _ => unreachable!("parameters match the layer spec"),
            }
        }
        unreachable!("validated spec ends with a classifier")
    }

    /// Mean cross-entropy and accuracy with running statistics.
    pub fn evaluate(&self, batch: Batch) -> Result<(f64, f64)> {
        self.check_labels(&batch)?;
        let logits = self.logits(batch.inputs, false)?;
        let (loss, correct, _) = cross_entropy(&logits, batch.labels);
        Ok((loss, correct as f64 / batch.inputs.len() as f64))
    }

    /// Mean cross-entropy with batch statistics, without autodiff.
    pub fn train_loss(&self, batch: Batch) -> Result<f64> {
        self.check_labels(&batch)?;
        let logits = self.logits(batch.inputs, true)?;
        Ok(cross_entropy(&logits, batch.labels).0)
    }

    /// Training-mode loss and gradients for every parameter.
    pub fn step_gradients(&self, batch: Batch) -> Result<StepResult> {
        self.check_labels(&batch)?;
        let mut tape = Tape::new();
        let mut xs: Vec<NodeId> = batch
            .inputs
            .iter()
            .map(|x| tape.constant(x.as_matrix().clone()))
            .collect();
        let mut leaves = Vec::with_capacity(self.params.len());
        let mut stats = vec![None; self.params.len()];
        let mut logeig_dim = 0;
        let n_layers = self.spec.layers.len();
        for (i, (layer, p)) in self.spec.layers.iter().zip(&self.params).enumerate() {
            let at = |e: Error| e.with_context(&format!("layer {i}"));
            match (layer, p) {
                (Layer::BiMap { .. }, Params::BiMap(w)) => {
                    let wid = tape.leaf(w.clone());
                    xs = xs.iter().map(|&x| tape.congruence(x, wid)).collect::<Result<_>>()?;
                    leaves.push(LeafIds::BiMap(wid));
                }
                (Layer::Gbwbn(_), Params::Gbwbn(state)) => {
                    let ids = GbwbnParams::leaves(&mut tape, state);
                    let mut st = state.clone();
                    st.set_mode(Mode::Train);
                    let fwd = gbwbn_tape(&mut tape, &xs, &ids, &st).map_err(at)?;
                    xs = fwd.outputs;
                    stats[i] = fwd.stats;
                    leaves.push(LeafIds::Gbwbn(ids));
                }
                (Layer::ReEig { eps }, _) => {
                    xs = xs
                        .iter()
                        .map(|&x| tape.eigen_fn(x, MatrixFunction::ReluFloor(*eps)))
                        .collect::<Result<_>>()
                        .map_err(at)?;
                    leaves.push(LeafIds::None);
                }
                (Layer::LogEig, _) => {
                    xs = xs
                        .iter()
                        .map(|&x| tape.eigen_fn(x, MatrixFunction::Log))
                        .collect::<Result<_>>()
                        .map_err(at)?;
                    logeig_dim = tape.matrix(xs[0]).nrows();
                    leaves.push(LeafIds::None);
                }
                (Layer::Classifier { .. }, Params::Classifier { .. }) => {
                    debug_assert_eq!(i + 1, n_layers);
                    leaves.push(LeafIds::None);
                }
                _ => unreachable!("parameters match the layer spec"),
            }
        }

        let Some(Params::Classifier { weight, bias }) = self.params.last() else {
            unreachable!("validated spec ends with a classifier")
        };
        let features: Vec<DVector<f64>> = xs
            .iter()
            .map(|&l| DVector::from_vec(vectorize_symmetric(tape.matrix(l))))
            .collect();
        let logits: Vec<DVector<f64>> = features.iter().map(|v| weight * v + bias).collect();
        let (loss, correct, dlogits) = cross_entropy(&logits, batch.labels);

        let mut gw = DMatrix::zeros(weight.nrows(), weight.ncols());
        let mut gb = DVector::zeros(bias.len());
        let mut seeds = Vec::with_capacity(xs.len());
        for ((v, g), &l) in features.iter().zip(&dlogits).zip(&xs) {
            gw += g * v.transpose();
            gb += g;
            let gv = weight.transpose() * g;
            seeds.push((l, Value::Matrix(vectorize_adjoint(gv.as_slice(), logeig_dim))));
        }
        let grad = tape.backward(&seeds)?;

        let grads = leaves
            .iter()
            .zip(&self.params)
            .map(|(ids, p)| match (ids, p) {
                (LeafIds::BiMap(w), _) => ParamGrad::BiMap(grad.matrix(*w)),
                (LeafIds::Gbwbn(g), _) => ParamGrad::Gbwbn {
                    m: grad.matrix(g.m),
                    bias: grad.matrix(g.bias),
                    scale: grad.scalar(g.scale),
                },
                (LeafIds::None, Params::Classifier { .. }) => ParamGrad::Classifier {
                    weight: gw.clone(),
                    bias: gb.clone(),
                },
                (LeafIds::None, _) => ParamGrad::Stateless,
            })
            .collect();
        Ok(StepResult {
            loss,
            correct,
            grads,
            stats,
        })
    }

    /// Stiefel steps for BiMap weights, RSGD for `M` and `𝒢`, plain gradient steps for the
    /// scale and the classifier; running statistics are folded in afterwards.
    pub fn apply_step(&mut self, step: &StepResult, lr: f64) -> Result<()> {
        let mut next = self.params.clone();
        for (i, (p, g)) in next.iter_mut().zip(&step.grads).enumerate() {
            let at = |e: Error| e.with_context(&format!("layer {i} update"));
            match (p, g) {
                (Params::BiMap(w), ParamGrad::BiMap(gw)) => *w = stiefel_step(w, gw, lr).map_err(at)?,
                (Params::Gbwbn(state), ParamGrad::Gbwbn { m, bias, scale }) => {
                    let new_m = rsgd_step(state.m(), m, lr).map_err(at)?;
                    let new_bias = rsgd_step(state.bias(), bias, lr).map_err(at)?;
                    state.set_m(new_m)?;
                    state.set_bias(new_bias)?;
                    state.set_scale(state.scale() - lr * scale).map_err(|e| {
                        Error::Optimizer(format!("layer {i}: scale update failed: {e}"))
                    })?;
                    if let Some(stats) = &step.stats[i] {
                        state.set_mode(Mode::Train);
                        state.update_running(stats)?;
                    }
                }
                (Params::Classifier { weight, bias }, ParamGrad::Classifier { weight: gw, bias: gb }) => {
                    *weight -= gw * lr;
                    *bias -= gb * lr;
                }
                (Params::Stateless, ParamGrad::Stateless) => {}
                _ => unreachable!("gradients match parameters"),
            }
        }
        self.params = next;
        Ok(())
    }

    /// Largest `‖WᵀW - I‖_F` over BiMap layers.
    pub fn stiefel_drift(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| match p {
                Params::BiMap(w) => Some((w.transpose() * w - DMatrix::identity(w.ncols(), w.ncols())).norm()),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| match p {
                    Params::BiMap(w) => ParamCheckpoint::BiMap { w: matrix_to_rows(w) },
                    Params::Gbwbn(s) => ParamCheckpoint::Gbwbn { state: s.clone() },
                    Params::Stateless => ParamCheckpoint::Stateless,
                    Params::Classifier { weight, bias } => ParamCheckpoint::Classifier {
                        weight: matrix_to_rows(weight),
                        bias: bias.iter().copied().collect(),
                    },
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(c: ModelCheckpoint) -> Result<Self> {
        let last_dim = c.spec.validate()?;
        if c.params.len() != c.spec.layers.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameter entries for {} layers",
                c.params.len(),
                c.spec.layers.len()
            )));
        }
        let mut dim = c.spec.input_dim;
        let mut params = Vec::with_capacity(c.params.len());
        for (i, (layer, p)) in c.spec.layers.iter().zip(c.params).enumerate() {
            let bad = || Error::Config(format!("checkpoint layer {i} does not match its spec"));
            params.push(match (layer, p) {
                (Layer::BiMap { d_in, d_out }, ParamCheckpoint::BiMap { w }) => {
                    let w = rows_to_matrix(&w)?;
                    if w.shape() != (*d_in, *d_out) {
                        return Err(bad());
                    }
                    dim = *d_out;
                    Params::BiMap(w)
                }
                (Layer::Gbwbn(cfg), ParamCheckpoint::Gbwbn { state }) => {
                    if state.dim() != dim || state.config() != cfg {
                        return Err(bad());
                    }
                    Params::Gbwbn(state)
                }
                (Layer::ReEig { .. } | Layer::LogEig, ParamCheckpoint::Stateless) => Params::Stateless,
                (Layer::Classifier { num_classes }, ParamCheckpoint::Classifier { weight, bias }) => {
                    let weight = rows_to_matrix(&weight)?;
                    if weight.shape() != (*num_classes, feature_dim(last_dim)) || bias.len() != *num_classes {
                        return Err(bad());
                    }
                    Params::Classifier {
                        weight,
                        bias: DVector::from_vec(bias),
                    }
                }
                _ => return Err(bad()),
            });
        }
        Ok(Model { spec: c.spec, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.checkpoint())?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Model::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// JSON form of a model: the layer spec and each layer's parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub spec: LayerSpec,
    pub params: Vec<ParamCheckpoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum ParamCheckpoint {
    BiMap { w: Vec<Vec<f64>> },
    Gbwbn { state: GbwbnState },
    Stateless,
    Classifier { weight: Vec<Vec<f64>>, bias: Vec<f64> },
}
