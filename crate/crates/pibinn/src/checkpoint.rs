//! Model checkpoints: a JSON manifest (shape, mode, scale, structure) plus
//! a flat little-endian f64 binary holding all layer weights followed by
//! all thresholds.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_f64_exact, write_f64, BinError};
use crate::linalg::{DenseMatrix, LinalgError};
use crate::physics::BlockStructure;
use crate::unroll::{Activation, LayerParams, QuantMode, UnrolledNet};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint manifest at {path}: {detail}")]
    CorruptManifest { path: String, detail: String },
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    k: usize,
    delta: f64,
    activation: Activation,
    quant_mode: QuantMode,
    lambda0: f64,
    scale: f64,
    structure: Option<BlockStructure>,
    tied: bool,
    weight_rows: usize,
    weight_cols: usize,
    weights_file: String,
}

pub const MANIFEST_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

pub fn save_checkpoint(net: &UnrolledNet, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let w0 = &net.layers[0].w;
    let manifest = CheckpointManifest {
        k: net.num_layers(),
        delta: net.delta,
        activation: net.activation,
        quant_mode: net.quant_mode,
        lambda0: net.lambda0,
        scale: net.scale,
        structure: net.structure,
        tied: net.tied,
        weight_rows: w0.rows(),
        weight_cols: w0.cols(),
        weights_file: WEIGHTS_FILE.to_string(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| io_err(&manifest_path, e))?;
    let mut flat = Vec::with_capacity(net.num_layers() * (w0.rows() * w0.cols() + 1));
    for layer in &net.layers {
        flat.extend_from_slice(layer.w.entries());
    }
    for layer in &net.layers {
        flat.push(layer.theta);
    }
    write_f64(&dir.join(WEIGHTS_FILE), &flat)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<UnrolledNet, CheckpointError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| CheckpointError::CorruptManifest {
            path: manifest_path.display().to_string(),
            detail: e.to_string(),
        })?;
    if manifest.k == 0 {
        return Err(CheckpointError::ShapeMismatch("k must be >= 1".into()));
    }
    if manifest.weight_rows == 0 || manifest.weight_cols == 0 {
        return Err(CheckpointError::ShapeMismatch(
            "zero weight dimension".into(),
        ));
    }
    if let Some(s) = &manifest.structure {
        if manifest.tied && (s.v != manifest.weight_rows || s.p != manifest.weight_cols) {
            return Err(CheckpointError::ShapeMismatch(format!(
                "tied block {}x{} vs stored weights {}x{}",
                s.v, s.p, manifest.weight_rows, manifest.weight_cols
            )));
        }
    }
    let per_layer = manifest.weight_rows * manifest.weight_cols;
    let flat = read_f64_exact(
        &dir.join(&manifest.weights_file),
        manifest.k * per_layer + manifest.k,
    )?;
    let mut layers = Vec::with_capacity(manifest.k);
    for k in 0..manifest.k {
        let entries = flat[k * per_layer..(k + 1) * per_layer].to_vec();
        let w = DenseMatrix::from_entries(manifest.weight_rows, manifest.weight_cols, entries)?;
        layers.push(LayerParams { w, theta: 0.0 });
    }
    let theta_base = manifest.k * per_layer;
    for (k, layer) in layers.iter_mut().enumerate() {
        let theta = flat[theta_base + k];
        if theta < 0.0 || !theta.is_finite() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "layer {k} threshold {theta} invalid"
            )));
        }
        layer.theta = theta;
    }
    Ok(UnrolledNet {
        layers,
        delta: manifest.delta,
        activation: manifest.activation,
        scale: manifest.scale,
        lambda0: manifest.lambda0,
        quant_mode: manifest.quant_mode,
        structure: manifest.structure,
        tied: manifest.tied,
    })
}
