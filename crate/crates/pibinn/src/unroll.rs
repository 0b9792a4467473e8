//! The unrolled network: thresholding activations, forward pass with the
//! damped update x_k = act(δ·x_{k-1} − W_kᵀ(A x_{k-1} − y)), hand-derived
//! reverse-mode gradients, losses, and per-layer error curves.
//!
//! Everything operates on batches: sample vectors are columns of a
//! `DenseMatrix`, so one forward call covers the whole dataset and the
//! single-sample spec operations are the N=1 case.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{BlockDiagOperator, DenseMatrix, LinalgError, Operator};
use crate::physics::BlockStructure;

#[derive(Debug, Error)]
pub enum UnrollError {
    #[error("threshold must be nonnegative, got {0}")]
    NegativeTheta(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },
    #[error("trace is stale: {0}")]
    StaleTrace(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("layer {layer} weight shape {got_rows}x{got_cols} does not match expected {rows}x{cols}")]
    BadLayerShape {
        layer: usize,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    SoftThreshold,
    HardThreshold,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    HighRes,
    OneBitGlobal,
    Ternary,
    ChannelWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    NormError,
}

/// One layer: the weight applied transposed to the residual, plus its
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w: DenseMatrix,
    pub theta: f64,
}

/// The K-layer unrolled model.
///
/// In `OneBitGlobal` mode the stored weights are ±λ₀ and `scale` is the
/// learned global λ applied at forward time (effective magnitude λ₀·λ).
/// With `structure` present and `tied`, each layer stores a single v×p
/// block applied as BlockDiag_u without materializing it; untied structured
/// nets store the full masked dense weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnrolledNet {
    pub layers: Vec<LayerParams>,
    pub delta: f64,
    pub activation: Activation,
    pub scale: f64,
    pub lambda0: f64,
    pub quant_mode: QuantMode,
    pub structure: Option<BlockStructure>,
    pub tied: bool,
}

impl UnrolledNet {
    /// Dense net with zero-initialized weights of shape m×n per layer.
    pub fn zeros(k: usize, m: usize, n: usize, activation: Activation) -> Self {
        assert!(k >= 1);
        Self {
            layers: (0..k)
                .map(|_| LayerParams {
                    w: DenseMatrix::zeros(m, n),
                    theta: 0.0,
                })
                .collect(),
            delta: 1.0,
            activation,
            scale: 1.0,
            lambda0: 0.02,
            quant_mode: QuantMode::HighRes,
            structure: None,
            tied: true,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Multiplier folded into the stored weights at forward time.
    pub fn weight_scale(&self) -> f64 {
        match self.quant_mode {
            QuantMode::OneBitGlobal => self.scale,
            _ => 1.0,
        }
    }

    fn block_repeat(&self) -> usize {
        match (&self.structure, self.tied) {
            (Some(s), true) => s.u,
            _ => 1,
        }
    }

    /// Effective Wᵀ·X for layer k (scale folded in).
    fn w_tn(&self, k: usize, x: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        let u = self.block_repeat();
        let mut out = if u > 1 {
            BlockDiagOperator::new(self.layers[k].w.clone(), u).matmul_tn(x)?
        } else {
            self.layers[k].w.matmul_tn(x)?
        };
        let c = self.weight_scale();
        if c != 1.0 {
            for v in out.entries_mut() {
                *v *= c;
            }
        }
        Ok(out)
    }

    /// Effective W·X for layer k (scale folded in).
    fn w_nn(&self, k: usize, x: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        let u = self.block_repeat();
        let mut out = if u > 1 {
            BlockDiagOperator::new(self.layers[k].w.clone(), u).matmul(x)?
        } else {
            self.layers[k].w.matmul(x)?
        };
        let c = self.weight_scale();
        if c != 1.0 {
            for v in out.entries_mut() {
                *v *= c;
            }
        }
        Ok(out)
    }

    /// Effective (scale-applied) dense weight of layer k, materializing the
    /// tied block structure if present. Used by diagnostics, not training.
    pub fn effective_weight_dense(&self, k: usize) -> DenseMatrix {
        let u = self.block_repeat();
        let w = if u > 1 {
            BlockDiagOperator::new(self.layers[k].w.clone(), u).materialize()
        } else {
            self.layers[k].w.clone()
        };
        let c = self.weight_scale();
        if c != 1.0 {
            w.scaled(c)
        } else {
            w
        }
    }

    fn check_shapes(&self, a: &Operator) -> Result<(), UnrollError> {
        let (m, n) = (a.rows(), a.cols());
        let (er, ec) = match (&self.structure, self.tied) {
            (Some(s), true) => (s.v, s.p),
            _ => (m, n),
        };
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.w.rows() != er || layer.w.cols() != ec {
                return Err(UnrollError::BadLayerShape {
                    layer: k,
                    rows: er,
                    cols: ec,
                    got_rows: layer.w.rows(),
                    got_cols: layer.w.cols(),
                });
            }
            if layer.theta < 0.0 {
                return Err(UnrollError::NegativeTheta(layer.theta));
            }
        }
        Ok(())
    }
}

/// sgn(x)·max(|x|−θ, 0) elementwise.
pub fn soft_threshold(x: &[f64], theta: f64) -> Result<Vec<f64>, UnrollError> {
    if theta < 0.0 {
        return Err(UnrollError::NegativeTheta(theta));
    }
    Ok(x.iter().map(|&v| st(v, theta)).collect())
}

/// x·1_{|x|>θ} elementwise (magnitude-threshold variant).
pub fn hard_threshold(x: &[f64], theta: f64) -> Result<Vec<f64>, UnrollError> {
    if theta < 0.0 {
        return Err(UnrollError::NegativeTheta(theta));
    }
    Ok(x.iter().map(|&v| ht(v, theta)).collect())
}

#[inline]
fn st(v: f64, theta: f64) -> f64 {
    let m = v.abs() - theta;
    if m > 0.0 {
        v.signum() * m
    } else {
        0.0
    }
}

#[inline]
fn ht(v: f64, theta: f64) -> f64 {
    if v.abs() > theta {
        v
    } else {
        0.0
    }
}

#[inline]
fn act(kind: Activation, v: f64, theta: f64) -> f64 {
    match kind {
        Activation::SoftThreshold => st(v, theta),
        Activation::HardThreshold => ht(v, theta),
        Activation::Relu => {
            if v >= 0.0 {
                v
            } else {
                0.0
            }
        }
    }
}

// Subgradient convention: derivative 0 on the closed dead zone.
#[inline]
fn act_dz(kind: Activation, v: f64, theta: f64) -> f64 {
    match kind {
        Activation::SoftThreshold | Activation::HardThreshold => {
            if v.abs() > theta {
                1.0
            } else {
                0.0
            }
        }
        Activation::Relu => {
            if v > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// States x_0..x_K and pre-activations z_1..z_K of one batched forward
/// pass; residuals A·x_{k-1} − y are kept for reuse in the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub states: Vec<DenseMatrix>,
    pub pre_activations: Vec<DenseMatrix>,
    pub residuals: Vec<DenseMatrix>,
    pub batch: usize,
}

impl ForwardTrace {
    pub fn final_state(&self) -> &DenseMatrix {
        self.states.last().expect("trace has at least x_0")
    }
}

/// Batched forward pass; `y` holds one measurement per column and `x0`
/// defaults to the zero matrix.
pub fn forward(
    net: &UnrolledNet,
    a: &Operator,
    y: &DenseMatrix,
    x0: Option<&DenseMatrix>,
) -> Result<ForwardTrace, UnrollError> {
    net.check_shapes(a)?;
    let n = a.cols();
    let batch = y.cols();
    if y.rows() != a.rows() {
        return Err(LinalgError::DimMismatch {
            context: "forward measurements",
            expected: a.rows(),
            got: y.rows(),
        }
        .into());
    }
    let mut x = match x0 {
        Some(x0) => {
            if x0.rows() != n || x0.cols() != batch {
                return Err(LinalgError::DimMismatch {
                    context: "forward x0",
                    expected: n * batch,
                    got: x0.rows() * x0.cols(),
                }
                .into());
            }
            x0.clone()
        }
        None => DenseMatrix::zeros(n, batch),
    };
    let k_layers = net.num_layers();
    let mut states = Vec::with_capacity(k_layers + 1);
    let mut pre_activations = Vec::with_capacity(k_layers);
    let mut residuals = Vec::with_capacity(k_layers);
    states.push(x.clone());
    for k in 0..k_layers {
        let mut r = a.matmul(&x)?;
        for (rv, yv) in r.entries_mut().iter_mut().zip(y.entries().iter()) {
            *rv -= yv;
        }
        let wt_r = net.w_tn(k, &r)?;
        let theta = net.layers[k].theta;
        let mut z = DenseMatrix::zeros(n, batch);
        for ((zv, &xv), &wv) in z
            .entries_mut()
            .iter_mut()
            .zip(x.entries().iter())
            .zip(wt_r.entries().iter())
        {
            *zv = net.delta * xv - wv;
        }
        let mut next = DenseMatrix::zeros(n, batch);
        for (nv, &zv) in next.entries_mut().iter_mut().zip(z.entries().iter()) {
            *nv = act(net.activation, zv, theta);
        }
        if next.entries().iter().any(|v| !v.is_finite()) {
            return Err(UnrollError::NonFinite { layer: k + 1 });
        }
        residuals.push(r);
        pre_activations.push(z);
        x = next;
        states.push(x.clone());
    }
    Ok(ForwardTrace {
        states,
        pre_activations,
        residuals,
        batch,
    })
}

/// Batch-mean loss between the final state and the ground truth.
pub fn loss(estimate: &DenseMatrix, x_opt: &DenseMatrix, kind: LossKind) -> f64 {
    assert_eq!(estimate.rows(), x_opt.rows());
    assert_eq!(estimate.cols(), x_opt.cols());
    let n_samples = estimate.cols().max(1);
    let mut total = 0.0;
    for j in 0..estimate.cols() {
        let mut sq = 0.0;
        for i in 0..estimate.rows() {
            let d = estimate.get(i, j) - x_opt.get(i, j);
            sq += d * d;
        }
        total += match kind {
            LossKind::SquaredError => sq,
            LossKind::NormError => sq.sqrt(),
        };
    }
    total / n_samples as f64
}

/// Reverse-mode gradients of the batch-mean loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_w: Vec<DenseMatrix>,
    pub d_theta: Vec<f64>,
    pub d_scale: f64,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.d_scale.is_finite()
            && self.d_theta.iter().all(|v| v.is_finite())
            && self
                .d_w
                .iter()
                .all(|w| w.entries().iter().all(|v| v.is_finite()))
    }
}

pub fn backward(
    net: &UnrolledNet,
    a: &Operator,
    y: &DenseMatrix,
    x_opt: &DenseMatrix,
    trace: &ForwardTrace,
    kind: LossKind,
) -> Result<Gradients, UnrollError> {
    let k_layers = net.num_layers();
    if trace.states.len() != k_layers + 1 || trace.pre_activations.len() != k_layers {
        return Err(UnrollError::StaleTrace("layer count mismatch"));
    }
    if trace.batch != y.cols() || x_opt.cols() != y.cols() || x_opt.rows() != a.cols() {
        return Err(UnrollError::StaleTrace("batch or dimension mismatch"));
    }
    let batch = trace.batch;
    let n = a.cols();
    let inv_n = 1.0 / batch.max(1) as f64;

    // dL/dx_K
    let x_k = trace.final_state();
    let mut g = DenseMatrix::zeros(n, batch);
    match kind {
        LossKind::SquaredError => {
            for ((gv, &ev), &tv) in g
                .entries_mut()
                .iter_mut()
                .zip(x_k.entries().iter())
                .zip(x_opt.entries().iter())
            {
                *gv = 2.0 * inv_n * (ev - tv);
            }
        }
        LossKind::NormError => {
            for j in 0..batch {
                let mut sq = 0.0;
                for i in 0..n {
                    let d = x_k.get(i, j) - x_opt.get(i, j);
                    sq += d * d;
                }
                let norm = sq.sqrt();
                if norm > 0.0 {
                    for i in 0..n {
                        let d = x_k.get(i, j) - x_opt.get(i, j);
                        g.set(i, j, inv_n * d / norm);
                    }
                }
            }
        }
    }

    let c = net.weight_scale();
    let mut d_w: Vec<DenseMatrix> = net
        .layers
        .iter()
        .map(|l| DenseMatrix::zeros(l.w.rows(), l.w.cols()))
        .collect();
    let mut d_theta = vec![0.0; k_layers];
    let mut d_scale = 0.0;

    for k in (0..k_layers).rev() {
        let z = &trace.pre_activations[k];
        let r = &trace.residuals[k];
        let theta = net.layers[k].theta;
        // dz = g ⊙ act'(z)
        let mut dz = DenseMatrix::zeros(n, batch);
        for ((dv, &gv), &zv) in dz
            .entries_mut()
            .iter_mut()
            .zip(g.entries().iter())
            .zip(z.entries().iter())
        {
            *dv = gv * act_dz(net.activation, zv, theta);
        }
        // dθ: only ST has a θ-path; ∂ST_θ(z)/∂θ = −sgn(z) on the active set
        if net.activation == Activation::SoftThreshold {
            let mut acc = 0.0;
            for (&dv, &zv) in dz.entries().iter().zip(z.entries().iter()) {
                acc -= dv * zv.signum();
            }
            d_theta[k] = acc;
        }
        // dW_eff = −r · dzᵀ, folded down to the stored shape
        let dw_eff_into_stored = accumulate_weight_grad(net, r, &dz)?;
        if net.quant_mode == QuantMode::OneBitGlobal {
            let mut acc = 0.0;
            for (&dv, &wv) in dw_eff_into_stored
                .entries()
                .iter()
                .zip(net.layers[k].w.entries().iter())
            {
                acc += dv * wv;
            }
            d_scale += acc;
        }
        for (dst, &src) in d_w[k]
            .entries_mut()
            .iter_mut()
            .zip(dw_eff_into_stored.entries().iter())
        {
            *dst = c * src;
        }
        // g_{k-1} = δ·dz − Aᵀ(W_eff·dz)
        if k > 0 {
            let w_dz = net.w_nn(k, &dz)?;
            let at = a.matmul_tn(&w_dz)?;
            let mut g_prev = DenseMatrix::zeros(n, batch);
            for ((pv, &dv), &av) in g_prev
                .entries_mut()
                .iter_mut()
                .zip(dz.entries().iter())
                .zip(at.entries().iter())
            {
                *pv = net.delta * dv - av;
            }
            g = g_prev;
        }
    }

    Ok(Gradients {
        d_w,
        d_theta,
        d_scale,
    })
}

// Gradient of z = ... − W_effᵀ r w.r.t. the *stored* weight layout (without
// the scale factor): dense −r·dzᵀ, or the block-segment sum for tied
// structured weights.
fn accumulate_weight_grad(
    net: &UnrolledNet,
    r: &DenseMatrix,
    dz: &DenseMatrix,
) -> Result<DenseMatrix, LinalgError> {
    let u = net.block_repeat();
    if u == 1 {
        let mut dw = r.matmul_nt(dz)?;
        for v in dw.entries_mut() {
            *v = -*v;
        }
        Ok(dw)
    } else {
        let s = net.structure.expect("block_repeat > 1 implies structure");
        let (v_rows, p_cols) = (s.v, s.p);
        let batch = r.cols();
        let mut dw = DenseMatrix::zeros(v_rows, p_cols);
        for b in 0..u {
            for i in 0..v_rows {
                for j in 0..p_cols {
                    let mut acc = 0.0;
                    for t in 0..batch {
                        acc += r.get(b * v_rows + i, t) * dz.get(b * p_cols + j, t);
                    }
                    let cur = dw.get(i, j);
                    dw.set(i, j, cur - acc);
                }
            }
        }
        Ok(dw)
    }
}

/// Mean NMSE (dB) of the layer-k state against the truth, one value per
/// layer. Samples with zero-norm truth are excluded from the average.
pub fn per_layer_errors(
    net: &UnrolledNet,
    a: &Operator,
    y: &DenseMatrix,
    x_opt: &DenseMatrix,
) -> Result<Vec<f64>, UnrollError> {
    if y.cols() == 0 {
        return Err(UnrollError::EmptyDataset);
    }
    let trace = forward(net, a, y, None)?;
    let mut curve = Vec::with_capacity(net.num_layers());
    for k in 1..=net.num_layers() {
        curve.push(crate::diag::nmse_db(&trace.states[k], x_opt));
    }
    Ok(curve)
}
