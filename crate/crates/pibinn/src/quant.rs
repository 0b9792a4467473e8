//! Two-stage quantization-aware training: Stage I (lazy-projection STE or
//! ℓ1-proximal-regularized descent on latent full-precision weights),
//! Stage II (gradient descent on the single global scale), baseline
//! quantizers (ternary, channel-wise binary), and stored-bit accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{DenseMatrix, Operator};
use crate::physics::{apply_mask, SparsityMask};
use crate::unroll::{
    backward, forward, loss, LayerParams, LossKind, QuantMode, UnrollError, UnrolledNet,
};

#[derive(Debug, Error)]
pub enum QuantError {
    #[error(transparent)]
    Unroll(#[from] UnrollError),
    #[error("non-finite gradient in batch starting at sample {batch_start}")]
    NonFiniteGradient { batch_start: usize },
    #[error("invalid quantization config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QatMode {
    LazyProjection,
    ProxRegularized,
}

/// Stage-I hyperparameters, read straight from the run config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantConfig {
    #[serde(default = "default_mode")]
    pub mode: QatMode,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> QatMode {
    QatMode::LazyProjection
}
fn default_lambda0() -> f64 {
    0.02
}
fn default_lr0() -> f64 {
    1e-3
}
fn default_decay() -> f64 {
    0.9
}
fn default_decay_every() -> usize {
    10
}

impl QuantConfig {
    pub fn validate(&self) -> Result<(), QuantError> {
        if self.lambda0 <= 0.0 {
            return Err(QuantError::InvalidConfig("lambda0 must be > 0".into()));
        }
        if self.lr0 <= 0.0 {
            return Err(QuantError::InvalidConfig("lr0 must be > 0".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(QuantError::InvalidConfig("decay must be in (0, 1]".into()));
        }
        if self.beta < 0.0 {
            return Err(QuantError::InvalidConfig("beta must be >= 0".into()));
        }
        if self.decay_every == 0 {
            return Err(QuantError::InvalidConfig("decay_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Step-decayed learning rate for a 0-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Full-precision copies of every W_k and θ_k maintained during Stage I.
#[derive(Debug, Clone)]
pub struct ShadowState {
    pub latent: Vec<LayerParams>,
    pub lambda0: f64,
}

impl ShadowState {
    pub fn from_net(net: &UnrolledNet, lambda0: f64) -> Self {
        assert!(lambda0 > 0.0);
        Self {
            latent: net.layers.clone(),
            lambda0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-tensor first/second moment state; slot i is one parameter tensor
/// (layer weights or the threshold vector).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn step(&mut self, slot: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads.iter()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                while self.m.len() <= slot {
                    self.m.push(Vec::new());
                    self.v.push(Vec::new());
                }
                if self.m[slot].len() != params.len() {
                    self.m[slot] = vec![0.0; params.len()];
                    self.v[slot] = vec![0.0; params.len()];
                }
                let t = self.t.max(1) as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for i in 0..params.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grads[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// One epoch's view of the training data plus batching and loss options.
/// `batch_size = 0` means full batch.
#[derive(Clone, Copy)]
pub struct EpochContext<'a> {
    pub a: &'a Operator,
    pub y: &'a DenseMatrix,
    pub x_opt: &'a DenseMatrix,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    pub mask: Option<&'a SparsityMask>,
}

impl EpochContext<'_> {
    fn batch_ranges(&self) -> Vec<(usize, usize)> {
        let n = self.y.cols();
        let b = if self.batch_size == 0 {
            n
        } else {
            self.batch_size.min(n)
        };
        let mut out = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + b).min(n);
            out.push((start, end));
            start = end;
        }
        out
    }
}

/// Copy of columns [start, end).
pub fn cols_range(m: &DenseMatrix, start: usize, end: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m.rows(), end - start);
    for i in 0..m.rows() {
        for j in start..end {
            out.set(i, j - start, m.get(i, j));
        }
    }
    out
}

/// λ₀·sign(latent) with sign(0) := +1; masked positions forced to exact 0.
pub fn sign_project(
    latent_w: &DenseMatrix,
    lambda0: f64,
    mask: Option<&SparsityMask>,
) -> DenseMatrix {
    assert!(lambda0 > 0.0);
    let mut out = DenseMatrix::zeros(latent_w.rows(), latent_w.cols());
    for (o, &v) in out
        .entries_mut()
        .iter_mut()
        .zip(latent_w.entries().iter())
    {
        *o = if v < 0.0 { -lambda0 } else { lambda0 };
    }
    if let Some(m) = mask {
        apply_mask(&mut out, m);
    }
    out
}

/// Refresh the net's weights/thresholds from the shadow copy, projecting
/// according to the net's quantization mode.
pub fn refresh_projection(
    net: &mut UnrolledNet,
    shadow: &ShadowState,
    mask: Option<&SparsityMask>,
) {
    for (layer, latent) in net.layers.iter_mut().zip(shadow.latent.iter()) {
        layer.theta = latent.theta.max(0.0);
        layer.w = match net.quant_mode {
            QuantMode::HighRes => {
                let mut w = latent.w.clone();
                if let Some(m) = mask {
                    apply_mask(&mut w, m);
                }
                w
            }
            QuantMode::OneBitGlobal => sign_project(&latent.w, shadow.lambda0, mask),
            QuantMode::Ternary => {
                let mut w = ternary_reconstruct(&latent.w);
                if let Some(m) = mask {
                    apply_mask(&mut w, m);
                }
                w
            }
            QuantMode::ChannelWise => {
                let mut w = channelwise_reconstruct(&latent.w);
                if let Some(m) = mask {
                    apply_mask(&mut w, m);
                }
                w
            }
        };
    }
}

fn optimizer_step_on_shadow(
    shadow: &mut ShadowState,
    grads: &crate::unroll::Gradients,
    lr: f64,
    opt: &mut Optimizer,
    mask: Option<&SparsityMask>,
) {
    opt.begin_step();
    let k = shadow.latent.len();
    for (slot, (latent, dw)) in shadow.latent.iter_mut().zip(grads.d_w.iter()).enumerate() {
        opt.step(slot, latent.w.entries_mut(), dw.entries(), lr);
        if let Some(m) = mask {
            apply_mask(&mut latent.w, m);
        }
    }
    let mut thetas: Vec<f64> = shadow.latent.iter().map(|l| l.theta).collect();
    opt.step(k, &mut thetas, &grads.d_theta, lr);
    for (latent, t) in shadow.latent.iter_mut().zip(thetas.iter()) {
        latent.theta = t.max(0.0);
    }
}

/// One STE epoch: gradients evaluated at the projected weights, updates
/// applied to the latent weights; thresholds update directly (unquantized).
/// Returns the mean batch loss; the net holds the refreshed projection.
pub fn ste_epoch(
    net: &mut UnrolledNet,
    shadow: &mut ShadowState,
    ctx: &EpochContext,
    lr: f64,
    opt: &mut Optimizer,
) -> Result<f64, QuantError> {
    let mut total = 0.0;
    let mut samples = 0usize;
    for (s, e) in ctx.batch_ranges() {
        refresh_projection(net, shadow, ctx.mask);
        let yb = cols_range(ctx.y, s, e);
        let xb = cols_range(ctx.x_opt, s, e);
        let trace = forward(net, ctx.a, &yb, None)?;
        total += loss(trace.final_state(), &xb, ctx.loss_kind) * (e - s) as f64;
        samples += e - s;
        let g = backward(net, ctx.a, &yb, &xb, &trace, ctx.loss_kind)?;
        if !g.is_finite() {
            return Err(QuantError::NonFiniteGradient { batch_start: s });
        }
        optimizer_step_on_shadow(shadow, &g, lr, opt, ctx.mask);
    }
    refresh_projection(net, shadow, ctx.mask);
    Ok(total / samples.max(1) as f64)
}

/// R(θ) = min(|θ−λ₀|, |θ+λ₀|): distance to the nearer anchor.
pub fn prox_regularizer(theta: f64, lambda0: f64) -> f64 {
    assert!(lambda0 > 0.0);
    (theta - lambda0).abs().min((theta + lambda0).abs())
}

/// argmin_z ½(z−θ)² + t·min(|z−λ₀|, |z+λ₀|): shrink toward the nearer
/// anchor ±λ₀ by t without crossing it; ties at θ=0 resolve toward +λ₀.
pub fn prox_step(theta: f64, t: f64, lambda0: f64) -> f64 {
    assert!(t >= 0.0);
    assert!(lambda0 > 0.0);
    let anchor = if theta >= 0.0 { lambda0 } else { -lambda0 };
    if theta > anchor {
        (theta - t).max(anchor)
    } else if theta < anchor {
        (theta + t).min(anchor)
    } else {
        anchor
    }
}

/// One regularized epoch: gradient step on the latent weights evaluated AT
/// the latent weights, then the elementwise prox with t = lr·beta. Weights
/// are only finalized to ±λ₀ by `sign_project` at Stage-I end.
pub fn prox_epoch(
    net: &mut UnrolledNet,
    shadow: &mut ShadowState,
    ctx: &EpochContext,
    lr: f64,
    beta: f64,
    opt: &mut Optimizer,
) -> Result<f64, QuantError> {
    if beta < 0.0 {
        return Err(QuantError::InvalidConfig("beta must be >= 0".into()));
    }
    let mut total = 0.0;
    let mut samples = 0usize;
    for (s, e) in ctx.batch_ranges() {
        // evaluate at the latent weights themselves
        for (layer, latent) in net.layers.iter_mut().zip(shadow.latent.iter()) {
            layer.w = latent.w.clone();
            layer.theta = latent.theta.max(0.0);
        }
        let yb = cols_range(ctx.y, s, e);
        let xb = cols_range(ctx.x_opt, s, e);
        let trace = forward(net, ctx.a, &yb, None)?;
        total += loss(trace.final_state(), &xb, ctx.loss_kind) * (e - s) as f64;
        samples += e - s;
        let g = backward(net, ctx.a, &yb, &xb, &trace, ctx.loss_kind)?;
        if !g.is_finite() {
            return Err(QuantError::NonFiniteGradient { batch_start: s });
        }
        optimizer_step_on_shadow(shadow, &g, lr, opt, ctx.mask);
        let t = lr * beta;
        if t > 0.0 {
            for latent in shadow.latent.iter_mut() {
                for v in latent.w.entries_mut() {
                    *v = prox_step(*v, t, shadow.lambda0);
                }
                if let Some(m) = ctx.mask {
                    apply_mask(&mut latent.w, m);
                }
            }
        }
    }
    for (layer, latent) in net.layers.iter_mut().zip(shadow.latent.iter()) {
        layer.w = latent.w.clone();
        layer.theta = latent.theta.max(0.0);
    }
    Ok(total / samples.max(1) as f64)
}

/// Mean batch loss of the net as-is (no updates).
pub fn epoch_loss(net: &UnrolledNet, ctx: &EpochContext) -> Result<f64, QuantError> {
    let trace = forward(net, ctx.a, ctx.y, None)?;
    Ok(loss(trace.final_state(), ctx.x_opt, ctx.loss_kind))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage2Result {
    pub lambda: f64,
    pub effective_scale: f64,
    pub best_loss: f64,
    pub epochs_run: usize,
    pub loss_curve: Vec<f64>,
}

/// Stage II: gradient descent on the single global scale λ (init 1.0),
/// thresholds and weight signs frozen. Stops early after 20 consecutive
/// loss increases and always returns the best-seen λ.
pub fn stage2_scale(
    net: &mut UnrolledNet,
    ctx: &EpochContext,
    lr: f64,
    epochs: usize,
) -> Result<Stage2Result, QuantError> {
    if net.quant_mode != QuantMode::OneBitGlobal {
        return Err(QuantError::InvalidConfig(
            "stage2_scale requires OneBitGlobal mode".into(),
        ));
    }
    net.scale = 1.0;
    let mut best_loss = epoch_loss(net, ctx)?;
    let mut best_lambda = net.scale;
    let mut prev = best_loss;
    let mut rising = 0usize;
    let mut curve = Vec::new();
    let mut epochs_run = 0usize;
    for _ in 0..epochs {
        let lambda_start = net.scale;
        let mut total = 0.0;
        let mut samples = 0usize;
        for (s, e) in ctx.batch_ranges() {
            let yb = cols_range(ctx.y, s, e);
            let xb = cols_range(ctx.x_opt, s, e);
            let trace = forward(net, ctx.a, &yb, None)?;
            total += loss(trace.final_state(), &xb, ctx.loss_kind) * (e - s) as f64;
            samples += e - s;
            let g = backward(net, ctx.a, &yb, &xb, &trace, ctx.loss_kind)?;
            if !g.d_scale.is_finite() {
                return Err(QuantError::NonFiniteGradient { batch_start: s });
            }
            net.scale -= lr * g.d_scale;
        }
        let epoch_mean = total / samples.max(1) as f64;
        curve.push(epoch_mean);
        epochs_run += 1;
        if epoch_mean < best_loss {
            best_loss = epoch_mean;
            best_lambda = lambda_start;
        }
        if epoch_mean > prev {
            rising += 1;
            if rising >= 20 {
                break;
            }
        } else {
            rising = 0;
        }
        prev = epoch_mean;
    }
    // the final λ never got an epoch loss of its own; score it too
    let final_lambda = net.scale;
    net.scale = final_lambda;
    let final_loss = epoch_loss(net, ctx)?;
    if final_loss < best_loss {
        best_loss = final_loss;
        best_lambda = final_lambda;
    }
    net.scale = best_lambda;
    Ok(Stage2Result {
        lambda: best_lambda,
        effective_scale: net.lambda0 * best_lambda,
        best_loss,
        epochs_run,
        loss_curve: curve,
    })
}

/// Per-row γ_r = mean|row| (1 for all-zero rows); entries of w/γ_r in
/// (−0.5, 0.5) map to 0, everything else to its sign.
pub fn ternary_project(w: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let mut tern = DenseMatrix::zeros(w.rows(), w.cols());
    let mut scales = Vec::with_capacity(w.rows());
    for i in 0..w.rows() {
        let row = w.row(i);
        let mean_abs = row.iter().map(|v| v.abs()).sum::<f64>() / row.len().max(1) as f64;
        let gamma = if mean_abs == 0.0 { 1.0 } else { mean_abs };
        for (j, &v) in row.iter().enumerate() {
            let a = v / gamma;
            let q = if a.abs() < 0.5 {
                0.0
            } else if a < 0.0 {
                -1.0
            } else {
                1.0
            };
            tern.set(i, j, q);
        }
        scales.push(gamma);
    }
    (tern, scales)
}

/// γ_r·tern_r per row.
pub fn ternary_reconstruct(w: &DenseMatrix) -> DenseMatrix {
    let (mut tern, scales) = ternary_project(w);
    for i in 0..tern.rows() {
        let g = scales[i];
        for v in tern.row_mut(i) {
            *v *= g;
        }
    }
    tern
}

/// Per-row γ_r = mean|row|, bin = sign(w) with sign(0) = +1.
pub fn channelwise_binarize(w: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let mut bin = DenseMatrix::zeros(w.rows(), w.cols());
    let mut scales = Vec::with_capacity(w.rows());
    for i in 0..w.rows() {
        let row = w.row(i);
        let gamma = row.iter().map(|v| v.abs()).sum::<f64>() / row.len().max(1) as f64;
        for (j, &v) in row.iter().enumerate() {
            bin.set(i, j, if v < 0.0 { -1.0 } else { 1.0 });
        }
        scales.push(gamma);
    }
    (bin, scales)
}

/// γ_r·bin_r per row.
pub fn channelwise_reconstruct(w: &DenseMatrix) -> DenseMatrix {
    let (mut bin, scales) = channelwise_binarize(w);
    for i in 0..bin.rows() {
        let g = scales[i];
        for v in bin.row_mut(i) {
            *v *= g;
        }
    }
    bin
}

/// Total stored bits: 1 bit per active one-bit weight (2 ternary, 32
/// high-res), 32 per threshold, 32 per real scale; structural zeros carry
/// no bits, and tied block structure stores one block per layer.
pub fn effective_bits(net: &UnrolledNet) -> u64 {
    let k = net.num_layers() as u64;
    let (weights_per_layer, scale_rows_per_layer) = match (&net.structure, net.tied) {
        (Some(s), true) => ((s.v * s.p) as u64, s.v as u64),
        (Some(s), false) => ((s.u * s.v * s.p) as u64, s.rows() as u64),
        (None, _) => {
            let w = &net.layers[0].w;
            ((w.rows() * w.cols()) as u64, w.rows() as u64)
        }
    };
    let per_weight = match net.quant_mode {
        QuantMode::OneBitGlobal | QuantMode::ChannelWise => 1,
        QuantMode::Ternary => 2,
        QuantMode::HighRes => 32,
    };
    let mut bits = k * weights_per_layer * per_weight + 32 * k;
    match net.quant_mode {
        QuantMode::OneBitGlobal => bits += 32,
        QuantMode::Ternary | QuantMode::ChannelWise => bits += 32 * k * scale_rows_per_layer,
        QuantMode::HighRes => {}
    }
    bits
}
