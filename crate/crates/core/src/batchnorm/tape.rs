//! GBWBN forward recorded on an autodiff tape, built from the same operations as the
//! plain forward so both agree to rounding.

use crate::autodiff::{NodeId, SumKernel, Tape};
use crate::error::{Error, Result};
use crate::linalg::{eigh, MatrixFunction, SpdMatrix};

use super::{BatchStats, GbwbnState, Mode};

/// Tape nodes of the learnable layer parameters.
#[derive(Clone, Copy, Debug)]
pub struct GbwbnParams {
    pub m: NodeId,
    pub bias: NodeId,
    pub scale: NodeId,
}

impl GbwbnParams {
    /// Register the state's parameters as differentiable leaves.
    pub fn leaves(tape: &mut Tape, state: &GbwbnState) -> Self {
        GbwbnParams {
            m: tape.leaf_symmetric(state.m().as_matrix().clone()),
            bias: tape.leaf_symmetric(state.bias().as_matrix().clone()),
            scale: tape.leaf_scalar(state.scale()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TapeForward {
    pub outputs: Vec<NodeId>,
    /// Batch statistics in train mode, for the running-statistics update.
    pub stats: Option<BatchStats>,
}

fn require_pd(tape: &Tape, id: NodeId, context: &str) -> Result<()> {
    let e = eigh(tape.matrix(id))?;
    if !(e.min_value() > 0.0) {
        return Err(Error::out_of_domain(context.to_string(), e.min_value()));
    }
    Ok(())
}

/// Same floor as the plain forward's SPD construction.
fn require_spd(tape: &Tape, id: NodeId, context: &str) -> Result<()> {
    SpdMatrix::from_matrix(tape.matrix(id).clone())
        .map(|_| ())
        .map_err(|e| e.with_context(context))
}

/// `Aᵀ X^θ A` with `A = M^{-1/2}`.
fn hat(tape: &mut Tape, x: NodeId, theta: f64, mis: NodeId) -> Result<NodeId> {
    let xt = tape.eigen_fn(x, MatrixFunction::Pow(theta))?;
    tape.congruence(xt, mis)
}

/// `(1/N) Σ d²(B, Xᵢ) / θ²` by the trace form.
fn variance(tape: &mut Tape, hats: &[NodeId], b: NodeId, bs: NodeId, theta: f64) -> Result<NodeId> {
    let trb = tape.trace(b)?;
    let minus_two = tape.constant_scalar(-2.0);
    let mut terms = Vec::with_capacity(hats.len());
    for &x in hats {
        let inner = tape.congruence(x, bs)?;
        let root = tape.eigen_fn(inner, MatrixFunction::Sqrt)?;
        let cross = tape.trace(root)?;
        let cross = tape.scalar_mul(cross, minus_two)?;
        let trx = tape.trace(x)?;
        terms.push(tape.sum(&[trb, trx, cross])?);
    }
    let total = tape.sum(&terms)?;
    let w = tape.constant_scalar(1.0 / (hats.len() as f64 * theta * theta));
    tape.scalar_mul(total, w)
}

/// Fixed-point mean with `iters` steps from the arithmetic mean.
fn mean(tape: &mut Tape, hats: &[NodeId], iters: usize) -> Result<NodeId> {
    let n = hats.len() as f64;
    let total = tape.sum(hats)?;
    let mut g = tape.scale(total, 1.0 / n)?;
    for _ in 0..iters {
        let gs = tape.eigen_fn(g, MatrixFunction::Sqrt)?;
        let gis = tape.eigen_fn(g, MatrixFunction::InvSqrt)?;
        let mut roots = Vec::with_capacity(hats.len());
        for &x in hats {
            let inner = tape.congruence(x, gs)?;
            roots.push(tape.eigen_fn(inner, MatrixFunction::Sqrt)?);
        }
        let s = tape.sum(&roots)?;
        let s = tape.scale(s, 1.0 / n)?;
        let s2 = tape.matmul(s, s)?;
        g = tape.congruence(s2, gis)?;
    }
    Ok(g)
}

/// Record GBWBN for `inputs` on `tape`. Statistics come from the batch in train mode and
/// from the state's running statistics (as constants) in eval mode. The state is not
/// modified; fold `stats` in with [`GbwbnState::update_running`].
pub fn gbwbn_tape(
    tape: &mut Tape,
    inputs: &[NodeId],
    params: &GbwbnParams,
    state: &GbwbnState,
) -> Result<TapeForward> {
    if inputs.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let theta = state.theta();
    let eps = state.config().eps;
    let mis = tape.eigen_fn(params.m, MatrixFunction::InvSqrt)?;
    let ms = tape.eigen_fn(params.m, MatrixFunction::Sqrt)?;
    let hats = inputs
        .iter()
        .map(|&x| hat(tape, x, theta, mis))
        .collect::<Result<Vec<_>>>()?;
    let ghat = hat(tape, params.bias, theta, mis)?;

    let (b, var, stats) = match state.mode() {
        Mode::Train => {
            let b = mean(tape, &hats, state.config().mean_iters)?;
            let bs = tape.eigen_fn(b, MatrixFunction::Sqrt)?;
            let var = variance(tape, &hats, b, bs, theta)?;
            let stats = BatchStats {
                mean: SpdMatrix::from_matrix(tape.matrix(b).clone())
                    .map_err(|e| e.with_context("batch mean"))?,
                var: tape.scalar(var).max(0.0),
            };
            (b, var, Some(stats))
        }
        Mode::Eval => (
            tape.constant(state.running().mean.as_matrix().clone()),
            tape.constant_scalar(state.running().var),
            None,
        ),
    };

    let bs = tape.eigen_fn(b, MatrixFunction::Sqrt)?;
    let bis = tape.eigen_fn(b, MatrixFunction::InvSqrt)?;
    let shifted = tape.scalar_add_const(var, eps)?;
    let inv_sd = tape.scalar_pow(shifted, -0.5)?;
    let c = tape.scalar_mul(params.scale, inv_sd)?;

    let mut outputs = Vec::with_capacity(hats.len());
    for (i, &x) in hats.iter().enumerate() {
        let at = |stage: &str| format!("element {i}: {stage}");
        // Log_B(X) = P + Pᵀ - 2B with P = B^{1/2} (B^{1/2} X B^{1/2})^{1/2} B^{-1/2}.
        let inner = tape.congruence(x, bs)?;
        let root = tape.eigen_fn(inner, MatrixFunction::Sqrt)?;
        let p = tape.matmul(bs, root)?;
        let p = tape.matmul(p, bis)?;
        let pt = tape.transpose(p)?;
        let two_b = tape.scale(b, 2.0)?;
        let log = tape.add(p, pt)?;
        let log = tape.sub(log, two_b)?;
        // Transport to I; the centered point is (I + T/2)², with square root |I + T/2|.
        let t = tape.spectral_kernel(b, log, SumKernel::ToIdentity)?;
        let a = tape.scale(t, 0.5)?;
        let a = tape.add_scaled_identity(a, 1.0)?;
        let root = tape.eigen_fn(a, MatrixFunction::Abs)?;
        require_spd(tape, root, &at("centering"))?;
        // Exp_I(c Log_I X) = (c (X^{1/2} - I) + I)².
        let y = tape.add_scaled_identity(root, -1.0)?;
        let y = tape.scale_by(y, c)?;
        let y = tape.add_scaled_identity(y, 1.0)?;
        require_pd(tape, y, &at("scaling: s(X^(1/2) - I) + I is not positive definite"))?;
        let scaled = tape.matmul(y, y)?;
        // Log_I, transport to Ĝ, Exp_Ĝ(S) = (I + L) Ĝ (I + L) with L = L_Ĝ(S).
        let root = tape.eigen_fn(scaled, MatrixFunction::Sqrt)?;
        let log = tape.scale(root, 2.0)?;
        let log = tape.add_scaled_identity(log, -2.0)?;
        let t = tape.spectral_kernel(ghat, log, SumKernel::FromIdentity)?;
        let l = tape.lyapunov(ghat, t)?;
        let a = tape.add_scaled_identity(l, 1.0)?;
        let biased = tape.congruence(ghat, a)?;
        require_spd(tape, biased, &at("biasing"))?;
        // (M^{1/2} X M^{1/2})^{1/θ}
        let back = tape.congruence(biased, ms)?;
        outputs.push(tape.eigen_fn(back, MatrixFunction::Pow(1.0 / theta))?);
    }
    Ok(TapeForward { outputs, stats })
}
