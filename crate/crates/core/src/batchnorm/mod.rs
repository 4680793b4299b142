//! Riemannian batch normalization under the BW metric (BWBN) and its power-deformed
//! generalization (GBWBN).
//!
//! GBWBN maps each input through `X ↦ M^{-1/2} X^θ M^{-1/2}`, normalizes there with BWBN
//! (centering at the batch mean, rescaling the dispersion around `I`, biasing towards the
//! transformed bias), and maps back with `X ↦ (M^{1/2} X M^{1/2})^{1/θ}`. Running statistics
//! live in the transformed space.

mod tape;

pub use tape::{gbwbn_tape, GbwbnParams, TapeForward};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::frechet::{frechet_mean, frechet_variance, update_running_stats, RunningStats, WeightVector};
use crate::linalg::{check_dims, lyapunov_solve, MatrixFunction, SpdMatrix, SymmetricMatrix};
use crate::metrics::{
    bw_log, check_theta, log_at_identity, transport_from_identity, transport_to_identity,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Hyperparameters fixed for the lifetime of a layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbwbnConfig {
    pub theta: f64,
    pub momentum: f64,
    pub eps: f64,
    /// Fixed-point iterations for the batch mean.
    #[serde(default = "default_mean_iters")]
    pub mean_iters: usize,
}

fn default_mean_iters() -> usize {
    1
}

impl Default for GbwbnConfig {
    fn default() -> Self {
        GbwbnConfig {
            theta: 1.0,
            momentum: 0.1,
            eps: 1e-5,
            mean_iters: 1,
        }
    }
}

impl GbwbnConfig {
    pub fn validate(&self) -> Result<()> {
        if check_theta(self.theta).is_err() {
            return Err(Error::Config(format!("theta must be finite and nonzero, got {}", self.theta)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1]", self.momentum)));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.mean_iters == 0 {
            return Err(Error::Config("mean_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learnable parameters, hyperparameters and running statistics of one GBWBN layer.
#[derive(Clone, Debug)]
pub struct GbwbnState {
    config: GbwbnConfig,
    scale: f64,
    m: SpdMatrix,
    bias: SpdMatrix,
    running: RunningStats,
    mode: Mode,
}

fn check_scale(s: f64) -> Result<()> {
    if s == 0.0 || !s.is_finite() {
        return Err(Error::Config(format!("scale must be finite and nonzero, got {s}")));
    }
    Ok(())
}

impl GbwbnState {
    /// `M = I`, `𝒢 = I`, `s = 1`, running statistics `(I, 1)`, train mode.
    pub fn new(dim: usize, config: GbwbnConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        Ok(GbwbnState {
            config,
            scale: 1.0,
            m: SpdMatrix::identity(dim),
            bias: SpdMatrix::identity(dim),
            running: RunningStats::identity(dim),
            mode: Mode::Train,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn config(&self) -> &GbwbnConfig {
        &self.config
    }

    pub fn theta(&self) -> f64 {
        self.config.theta
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn m(&self) -> &SpdMatrix {
        &self.m
    }

    pub fn bias(&self) -> &SpdMatrix {
        &self.bias
    }

    pub fn running(&self) -> &RunningStats {
        &self.running
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn set_scale(&mut self, s: f64) -> Result<()> {
        check_scale(s)?;
        self.scale = s;
        Ok(())
    }

    pub fn set_m(&mut self, m: SpdMatrix) -> Result<()> {
        check_dims(self.dim(), m.dim())?;
        self.m = m;
        Ok(())
    }

    pub fn set_bias(&mut self, bias: SpdMatrix) -> Result<()> {
        check_dims(self.dim(), bias.dim())?;
        self.bias = bias;
        Ok(())
    }

    pub fn set_running(&mut self, running: RunningStats) -> Result<()> {
        check_dims(self.dim(), running.mean.dim())?;
        if !(running.var >= 0.0) {
            return Err(Error::Config(format!("running variance {} is negative", running.var)));
        }
        self.running = running;
        Ok(())
    }

    /// Fold batch statistics into the running statistics (train mode only).
    pub fn update_running(&mut self, batch: &BatchStats) -> Result<()> {
        if self.mode == Mode::Eval {
            return Ok(());
        }
        self.running =
            update_running_stats(&self.running, &batch.mean, batch.var, self.config.momentum)?;
        Ok(())
    }

    /// `M^{-1/2} X^θ M^{-1/2}`.
    pub fn to_hat(&self, x: &SpdMatrix) -> Result<SpdMatrix> {
        check_dims(self.dim(), x.dim())?;
        let xt = x
            .map_spd(MatrixFunction::Pow(self.theta()))
            .map_err(|e| e.with_context("power map"))?;
        xt.congruence(self.m.inv_sqrt().as_matrix())
            .map_err(|e| e.with_context("metric congruence"))
    }

    /// `(M^{1/2} X M^{1/2})^{1/θ}`.
    pub fn from_hat(&self, x: &SpdMatrix) -> Result<SpdMatrix> {
        let y = x
            .congruence(self.m.sqrt().as_matrix())
            .map_err(|e| e.with_context("inverse congruence"))?;
        y.map_spd(MatrixFunction::Pow(1.0 / self.theta()))
            .map_err(|e| e.with_context("inverse power map"))
    }

    /// GBWBN forward. Train mode uses and folds in batch statistics; eval mode uses the
    /// running statistics and leaves the state untouched.
    pub fn forward(&mut self, batch: &[SpdMatrix]) -> Result<Vec<SpdMatrix>> {
        let (out, stats) = self.forward_pure(batch)?;
        if let Some(stats) = stats {
            self.update_running(&stats)?;
        }
        Ok(out)
    }

    /// Forward pass without touching the state; returns the batch statistics in train mode.
    pub fn forward_pure(&self, batch: &[SpdMatrix]) -> Result<(Vec<SpdMatrix>, Option<BatchStats>)> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let hat = batch
            .iter()
            .enumerate()
            .map(|(i, x)| self.to_hat(x).map_err(|e| e.with_context(&format!("element {i}"))))
            .collect::<Result<Vec<_>>>()?;
        let ghat = self.to_hat(&self.bias).map_err(|e| e.with_context("bias"))?;
        let (stats, batch_stats) = match self.mode {
            Mode::Train => {
                let s = batch_statistics(&hat, self.theta(), self.config.mean_iters)?;
                (s.clone(), Some(s))
            }
            Mode::Eval => (
                BatchStats {
                    mean: self.running.mean.clone(),
                    var: self.running.var,
                },
                None,
            ),
        };
        let normalized = normalize(&hat, &stats, &ghat, self.scale, self.config.eps)?;
        let out = normalized
            .iter()
            .enumerate()
            .map(|(i, x)| self.from_hat(x).map_err(|e| e.with_context(&format!("element {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok((out, batch_stats))
    }
}

/// Mean and (deformation-scaled) variance of a batch in the transformed space.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: SpdMatrix,
    pub var: f64,
}

/// `ℬ = frechet_mean(batch, uniform, iters)`, `ν² = (1/N) Σ d²(ℬ, Xᵢ) / θ²`.
pub fn batch_statistics(batch: &[SpdMatrix], theta: f64, iters: usize) -> Result<BatchStats> {
    let w = WeightVector::uniform(batch.len())?;
    let mean = frechet_mean(batch, &w, iters, 0.0).map_err(|e| e.with_context("batch mean"))?;
    let var = frechet_variance(batch, &mean, theta)?;
    Ok(BatchStats { mean, var })
}

/// `φ_{B→I}(X) = Exp_I(Γ_{B→I}(Log_B X))`.
///
/// `Exp_I` is applied as the closed form `(I + T/2)²`, which only needs the result to be
/// SPD: for non-commuting batches the transported logarithm regularly leaves the domain
/// where `I + T/2` is positive definite.
pub fn center_to_identity(b: &SpdMatrix, x: &SpdMatrix) -> Result<SpdMatrix> {
    let root = centered_root(b, x)?;
    let r = root.as_matrix();
    SpdMatrix::from_matrix(r * r)
}

/// `φ_{B→I}(X)^{1/2} = |I + T/2|`, taken without forming the square, which would
/// halve the usable dynamic range when `I + T/2` is nearly singular.
pub fn centered_root(b: &SpdMatrix, x: &SpdMatrix) -> Result<SpdMatrix> {
    let log = bw_log(b, x)?;
    let t = transport_to_identity(b, &log)?;
    let a = t.scale(0.5).shift(1.0);
    SpdMatrix::from_matrix(a.eigh()?.map(MatrixFunction::Abs))
}

/// `ψ_s(X) = Exp_I(s Log_I X) = (s(X^{1/2} - I) + I)²`.
pub fn scale_from_identity(x: &SpdMatrix, s: f64) -> Result<SpdMatrix> {
    scale_root(&x.sqrt(), s)
}

/// [`scale_from_identity`] given `X^{1/2}`.
pub fn scale_root(root: &SymmetricMatrix, s: f64) -> Result<SpdMatrix> {
    let y = root.shift(-1.0).scale(s).shift(1.0);
    let e = y.eigh()?;
    if !(e.min_value() > 0.0) {
        return Err(Error::out_of_domain(
            format!("scaling by {s}: s(X^(1/2) - I) + I is not positive definite"),
            e.min_value(),
        ));
    }
    let y = y.as_matrix();
    SpdMatrix::from_matrix(y * y).map_err(|e| e.with_context("scaling"))
}

/// `φ_{I→G}(X) = Exp_G(Γ_{I→G}(Log_I X))`.
///
/// `Exp_G` is applied as `(I + L) G (I + L)` with `L = L_G(T)`, requiring only an SPD result.
pub fn bias_from_identity(g: &SpdMatrix, x: &SpdMatrix) -> Result<SpdMatrix> {
    let log: SymmetricMatrix = log_at_identity(x);
    let t = transport_from_identity(g, &log)?;
    let a = lyapunov_solve(g, &t)?.shift(1.0);
    g.congruence(a.as_matrix())
}

/// Center at `stats.mean`, rescale by `s / √(ν² + ε)`, bias towards `bias`.
pub fn normalize(
    batch: &[SpdMatrix],
    stats: &BatchStats,
    bias: &SpdMatrix,
    scale: f64,
    eps: f64,
) -> Result<Vec<SpdMatrix>> {
    let c = scale / (stats.var + eps).sqrt();
    batch
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let at = |stage: &'static str| move |e: Error| e.with_context(&format!("element {i}: {stage}"));
            let centered = centered_root(&stats.mean, x).map_err(at("centering"))?;
            let scaled = scale_root(centered.sym(), c).map_err(at("scaling"))?;
            bias_from_identity(bias, &scaled).map_err(at("biasing"))
        })
        .collect()
}

/// BWBN: the `θ = 1`, `M = I` layer, using the state's bias, scale and statistics directly.
pub fn bwbn_forward(batch: &[SpdMatrix], state: &mut GbwbnState) -> Result<Vec<SpdMatrix>> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    for x in batch {
        check_dims(state.dim(), x.dim())?;
    }
    let stats = match state.mode {
        Mode::Train => batch_statistics(batch, 1.0, state.config.mean_iters)?,
        Mode::Eval => BatchStats {
            mean: state.running.mean.clone(),
            var: state.running.var,
        },
    };
    let out = normalize(batch, &stats, &state.bias, state.scale, state.config.eps)?;
    if state.mode == Mode::Train {
        state.update_running(&stats)?;
    }
    Ok(out)
}

pub fn gbwbn_forward(batch: &[SpdMatrix], state: &mut GbwbnState) -> Result<Vec<SpdMatrix>> {
    state.forward(batch)
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    dim: usize,
    theta: f64,
    momentum: f64,
    eps: f64,
    scale: f64,
    m: SpdMatrix,
    bias: SpdMatrix,
    running_mean: SpdMatrix,
    running_var: f64,
    #[serde(default = "default_mean_iters", skip_serializing_if = "is_one")]
    mean_iters: usize,
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

impl Serialize for GbwbnState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        StateRepr {
            dim: self.dim(),
            theta: self.config.theta,
            momentum: self.config.momentum,
            eps: self.config.eps,
            scale: self.scale,
            m: self.m.clone(),
            bias: self.bias.clone(),
            running_mean: self.running.mean.clone(),
            running_var: self.running.var,
            mean_iters: self.config.mean_iters,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GbwbnState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = StateRepr::deserialize(deserializer)?;
        let build = || -> Result<GbwbnState> {
            let mut s = GbwbnState::new(
                r.dim,
                GbwbnConfig {
                    theta: r.theta,
                    momentum: r.momentum,
                    eps: r.eps,
                    mean_iters: r.mean_iters,
                },
            )?;
            s.set_scale(r.scale)?;
            s.set_m(r.m.clone())?;
            s.set_bias(r.bias.clone())?;
            s.set_running(RunningStats {
                mean: r.running_mean.clone(),
                var: r.running_var,
            })?;
            Ok(s)
        };
        build().map_err(serde::de::Error::custom)
    }
}
