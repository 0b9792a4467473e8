//! Reported quantities: NMSE in dB, generalization gap, coherence and
//! per-layer spectral terms f_k, good-set membership, theory-prescribed
//! thresholds, storage bit counts, and machine-readable report emission.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    spectral_norm, submatrix, DenseMatrix, IndexSet, LinalgError, SPECTRAL_MAX_ITER_DEFAULT,
    SPECTRAL_TOL_DEFAULT,
};
use crate::unroll::{ForwardTrace, UnrolledNet};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unwritable path {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ratios below this report the −∞ sentinel ("-inf" in JSON, −150 in CSV).
pub const DB_FLOOR_RATIO: f64 = 1e-15;
pub const CSV_DB_FLOOR: f64 = -150.0;

/// Mean of ‖x̂ − x*‖²/‖x*‖² over samples (columns), in dB. Samples with
/// zero-norm truth are excluded from the average; a mean ratio below the
/// floor (or no valid samples) reports −∞.
pub fn nmse_db(estimates: &DenseMatrix, truths: &DenseMatrix) -> f64 {
    assert_eq!(estimates.rows(), truths.rows());
    assert_eq!(estimates.cols(), truths.cols());
    assert!(estimates.cols() > 0, "nmse over empty sample set");
    let mut total = 0.0;
    let mut counted = 0usize;
    for j in 0..estimates.cols() {
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..estimates.rows() {
            let t = truths.get(i, j);
            let d = estimates.get(i, j) - t;
            err += d * d;
            norm += t * t;
        }
        if norm > 0.0 {
            total += err / norm;
            counted += 1;
        }
    }
    if counted == 0 {
        return f64::NEG_INFINITY;
    }
    let ratio = total / counted as f64;
    if ratio < DB_FLOOR_RATIO {
        f64::NEG_INFINITY
    } else {
        10.0 * ratio.log10()
    }
}

/// Generalized coherence between positionally aligned column sets:
/// max over i ≠ j of |column_i(W)ᵀ · column_j(Q̄)|.
pub fn mu_coherence(w: &DenseMatrix, qbar: &DenseMatrix) -> f64 {
    assert_eq!(w.rows(), qbar.rows(), "column dot needs equal row counts");
    let mut mu = 0.0_f64;
    for i in 0..w.cols() {
        for j in 0..qbar.cols() {
            if i == j {
                continue;
            }
            let mut dot = 0.0;
            for r in 0..w.rows() {
                dot += w.get(r, i) * qbar.get(r, j);
            }
            mu = mu.max(dot.abs());
        }
    }
    mu
}

/// Coherence of the FULL weight columns against the support-restricted
/// sensing columns, excluding only the matched pairs (column S[j] of W vs
/// column j of A_𝒮).
pub fn mu_coherence_global(w: &DenseMatrix, a_s: &DenseMatrix, support: &IndexSet) -> f64 {
    assert_eq!(w.rows(), a_s.rows());
    assert_eq!(a_s.cols(), support.len());
    let mut mu = 0.0_f64;
    for i in 0..w.cols() {
        for (j, &sj) in support.indices().iter().enumerate() {
            if i == sj {
                continue;
            }
            let mut dot = 0.0;
            for r in 0..w.rows() {
                dot += w.get(r, i) * a_s.get(r, j);
            }
            mu = mu.max(dot.abs());
        }
    }
    mu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FkVariant {
    St,
    Ht,
}

/// Per-layer f_k = ‖δI − W_{𝒮,k}ᵀQ̃‖ (HT), plus μ·s for the ST variant,
/// using the effective (scale-applied) weights. `qtilde` has one column per
/// support index and the same row count as the weights (A_𝒮 in the fixed-A
/// convention, or Q̃ itself in square toy setups).
pub fn spectral_fk(
    net: &UnrolledNet,
    qtilde: &DenseMatrix,
    support: &IndexSet,
    variant: FkVariant,
) -> Result<Vec<f64>, DiagError> {
    let s = support.len();
    if qtilde.cols() != s {
        return Err(DiagError::ShapeMismatch(format!(
            "qtilde has {} columns, support has {s} indices",
            qtilde.cols()
        )));
    }
    let mut out = Vec::with_capacity(net.num_layers());
    for k in 0..net.num_layers() {
        let w_eff = net.effective_weight_dense(k);
        if support.ambient() != w_eff.cols() {
            return Err(DiagError::ShapeMismatch(format!(
                "support ambient {} vs weight cols {}",
                support.ambient(),
                w_eff.cols()
            )));
        }
        let w_s = submatrix(&w_eff, None, Some(support))?;
        if w_s.rows() != qtilde.rows() {
            return Err(DiagError::ShapeMismatch(format!(
                "weight rows {} vs qtilde rows {}",
                w_s.rows(),
                qtilde.rows()
            )));
        }
        let prod = w_s.matmul_tn(qtilde)?;
        let mut mat = DenseMatrix::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                let d = if i == j { net.delta } else { 0.0 };
                mat.set(i, j, d - prod.get(i, j));
            }
        }
        let mut fk = spectral_norm(&mat, SPECTRAL_TOL_DEFAULT, SPECTRAL_MAX_ITER_DEFAULT)?;
        if variant == FkVariant::St {
            fk += mu_coherence(&w_s, qtilde) * s as f64;
        }
        out.push(fk);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodSetReport {
    pub fk: Vec<f64>,
    pub good: Vec<bool>,
    /// Per layer, the matched products W_{𝒮,i}ᵀQ̃_i (Definition-1 values).
    pub diagonals: Vec<Vec<f64>>,
}

/// Strict f_k < 1 per layer, with the Definition-1 diagonal products for
/// inspection.
pub fn good_set_check(
    net: &UnrolledNet,
    qtilde: &DenseMatrix,
    support: &IndexSet,
    variant: FkVariant,
) -> Result<GoodSetReport, DiagError> {
    let fk = spectral_fk(net, qtilde, support, variant)?;
    let good = fk.iter().map(|&f| f < 1.0).collect();
    let mut diagonals = Vec::with_capacity(net.num_layers());
    for k in 0..net.num_layers() {
        let w_eff = net.effective_weight_dense(k);
        let w_s = submatrix(&w_eff, None, Some(support))?;
        let prod = w_s.matmul_tn(qtilde)?;
        diagonals.push((0..support.len()).map(|i| prod.get(i, i)).collect());
    }
    Ok(GoodSetReport {
        fk,
        good,
        diagonals,
    })
}

/// Theory-prescribed θ_k = μ^{W_k} · sup over samples of ‖x_{k−1} − x*‖₁
/// (analysis only, never fed back into training). `a` is the dense sensing
/// matrix used for the coherence term.
pub fn theory_theta(
    net: &UnrolledNet,
    a: &DenseMatrix,
    support: &IndexSet,
    trace: &ForwardTrace,
    x_opt: &DenseMatrix,
) -> Result<Vec<f64>, DiagError> {
    let a_s = submatrix(a, None, Some(support))?;
    let mut out = Vec::with_capacity(net.num_layers());
    for k in 0..net.num_layers() {
        let w_eff = net.effective_weight_dense(k);
        let mu = mu_coherence_global(&w_eff, &a_s, support);
        let prev = &trace.states[k];
        if prev.rows() != x_opt.rows() || prev.cols() != x_opt.cols() {
            return Err(DiagError::ShapeMismatch(
                "trace/truth batch mismatch".into(),
            ));
        }
        let mut sup_l1 = 0.0_f64;
        for j in 0..prev.cols() {
            let mut l1 = 0.0;
            for i in 0..prev.rows() {
                l1 += (prev.get(i, j) - x_opt.get(i, j)).abs();
            }
            sup_l1 = sup_l1.max(l1);
        }
        out.push(mu * sup_l1);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FcnRelu,
    FcnSt,
    Dun,
    OneBitDun,
}

/// Storage bits of the four named architectures. The FCN formulas use
/// (K−1)n² — a K-layer FCN has one m×n input layer and K−1 n×n layers.
pub fn bit_count(model: ModelKind, k: usize, m: usize, n: usize) -> u64 {
    assert!(k >= 1);
    let (k, m, n) = (k as u64, m as u64, n as u64);
    match model {
        ModelKind::FcnRelu => 32 * (m * n + (k - 1) * n * n),
        ModelKind::FcnSt => 32 * (m * n + (k - 1) * n * n) + 32 * k,
        ModelKind::Dun => 32 * k * (m * n + 1),
        ModelKind::OneBitDun => k * (m * n + 32),
    }
}

/// test − train, in dB.
pub fn gen_gap(train_nmse_db: f64, test_nmse_db: f64) -> f64 {
    test_nmse_db - train_nmse_db
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub train_nmse_db: f64,
    pub test_nmse_db: f64,
    pub gap_db: f64,
    pub bits: u64,
    pub params: u64,
    pub fk_curve: Vec<f64>,
    pub overlap: Option<f64>,
    pub layer_curve: Vec<f64>,
    /// (stage name, seconds) in execution order.
    pub wall_times: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn new(train_nmse_db: f64, test_nmse_db: f64) -> Self {
        Self {
            train_nmse_db,
            test_nmse_db,
            gap_db: gen_gap(train_nmse_db, test_nmse_db),
            bits: 0,
            params: 0,
            fk_curve: Vec::new(),
            overlap: None,
            layer_curve: Vec::new(),
            wall_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

fn db_json(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "\"-inf\"".to_string()
    } else {
        format!("{v}")
    }
}

fn db_csv(v: f64) -> f64 {
    if v == f64::NEG_INFINITY {
        CSV_DB_FLOOR
    } else {
        v
    }
}

/// Deterministic, byte-stable report files. JSON writes the "-inf" sentinel
/// for floored dB values; CSV writes −150 in numeric columns and one row
/// per layer for the curves.
pub fn emit_report(
    report: &MetricsReport,
    path: &Path,
    format: ReportFormat,
) -> Result<(), DiagError> {
    let text = match format {
        ReportFormat::Json => render_json(report),
        ReportFormat::Csv => render_csv(report),
    };
    fs::write(path, text).map_err(|e| DiagError::Unwritable {
        path: path.display().to_string(),
        source: e,
    })
}

fn render_json(r: &MetricsReport) -> String {
    let mut s = String::from("{\n");
    s.push_str(&format!(
        "  \"train_nmse_db\": {},\n",
        db_json(r.train_nmse_db)
    ));
    s.push_str(&format!(
        "  \"test_nmse_db\": {},\n",
        db_json(r.test_nmse_db)
    ));
    s.push_str(&format!("  \"gap_db\": {},\n", db_json(r.gap_db)));
    s.push_str(&format!("  \"bits\": {},\n", r.bits));
    s.push_str(&format!("  \"params\": {},\n", r.params));
    match r.overlap {
        Some(v) => s.push_str(&format!("  \"overlap\": {v},\n")),
        None => s.push_str("  \"overlap\": null,\n"),
    }
    let fk: Vec<String> = r.fk_curve.iter().map(|&v| db_json(v)).collect();
    s.push_str(&format!("  \"fk_curve\": [{}],\n", fk.join(", ")));
    let lc: Vec<String> = r.layer_curve.iter().map(|&v| db_json(v)).collect();
    s.push_str(&format!("  \"layer_curve\": [{}],\n", lc.join(", ")));
    let wt: Vec<String> = r
        .wall_times
        .iter()
        .map(|(name, secs)| format!("{{\"stage\": {:?}, \"seconds\": {secs}}}", name))
        .collect();
    s.push_str(&format!("  \"wall_times\": [{}]\n", wt.join(", ")));
    s.push_str("}\n");
    s
}

fn render_csv(r: &MetricsReport) -> String {
    let mut s = String::from("field,value\n");
    s.push_str(&format!("train_nmse_db,{}\n", db_csv(r.train_nmse_db)));
    s.push_str(&format!("test_nmse_db,{}\n", db_csv(r.test_nmse_db)));
    s.push_str(&format!("gap_db,{}\n", db_csv(r.gap_db)));
    s.push_str(&format!("bits,{}\n", r.bits));
    s.push_str(&format!("params,{}\n", r.params));
    if let Some(v) = r.overlap {
        s.push_str(&format!("overlap,{v}\n"));
    }
    for (name, secs) in &r.wall_times {
        s.push_str(&format!("wall_time_{name},{secs}\n"));
    }
    s.push_str("layer,fk,layer_nmse_db\n");
    let layers = r.fk_curve.len().max(r.layer_curve.len());
    for k in 0..layers {
        let fk = r
            .fk_curve
            .get(k)
            .map(|&v| db_csv(v).to_string())
            .unwrap_or_default();
        let lc = r
            .layer_curve
            .get(k)
            .map(|&v| db_csv(v).to_string())
            .unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", k + 1, fk, lc));
    }
    s
}
