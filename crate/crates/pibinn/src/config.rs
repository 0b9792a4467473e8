//! JSON run configurations for every CLI command, validated before any
//! computation starts.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{gen_dataset, load_dataset, DataError, Dataset, DatasetSpec};
use crate::diag::{FkVariant, ModelKind};
use crate::quant::{OptimizerKind, QuantConfig};
use crate::train::TrainSettings;
use crate::unroll::{Activation, LossKind, QuantMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config schema violation in {path}: {detail}")]
    Schema { path: String, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Schema {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// A dataset either persisted on disk or specified inline for generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetRef {
    Path(String),
    Spec(DatasetSpec),
}

impl DatasetRef {
    /// Load or generate the dataset; a seed override replaces the inline
    /// spec's seed (persisted datasets keep their recorded seed).
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<Dataset, DataError> {
        match self {
            DatasetRef::Path(p) => load_dataset(Path::new(p)),
            DatasetRef::Spec(spec) => {
                let mut spec = spec.clone();
                if let Some(seed) = seed_override {
                    spec.seed = seed;
                }
                gen_dataset(&spec)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub k: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_quant_mode")]
    pub quant_mode: QuantMode,
    #[serde(default = "default_tied")]
    pub tied: bool,
}

fn default_delta() -> f64 {
    1.0
}
fn default_activation() -> Activation {
    Activation::SoftThreshold
}
fn default_quant_mode() -> QuantMode {
    QuantMode::OneBitGlobal
}
fn default_tied() -> bool {
    true
}

/// One training scheme: model plus all stage hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelConfig,
    pub quant: QuantConfig,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default)]
    pub no_pretrain: bool,
    #[serde(default = "default_stage2_epochs")]
    pub stage2_epochs: usize,
    #[serde(default = "default_stage2_lr")]
    pub stage2_lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
}

fn default_name() -> String {
    "run".to_string()
}
fn default_pretrain_epochs() -> usize {
    30
}
fn default_stage2_epochs() -> usize {
    60
}
fn default_stage2_lr() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    250
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_loss() -> LossKind {
    LossKind::SquaredError
}

impl SchemeConfig {
    pub fn to_settings(&self) -> TrainSettings {
        TrainSettings {
            k: self.model.k,
            delta: self.model.delta,
            activation: self.model.activation,
            quant_mode: self.model.quant_mode,
            quant: self.quant.clone(),
            pretrain_epochs: self.pretrain_epochs,
            no_pretrain: self.no_pretrain,
            stage2_epochs: self.stage2_epochs,
            stage2_lr: self.stage2_lr,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            loss_kind: self.loss,
            tied: self.model.tied,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model.k == 0 {
            return Err(ConfigError::Invalid("model.k must be >= 1".into()));
        }
        if !(self.model.delta > 0.0 && self.model.delta <= 1.0) {
            return Err(ConfigError::Invalid("model.delta must be in (0, 1]".into()));
        }
        if self.stage2_lr <= 0.0 {
            return Err(ConfigError::Invalid("stage2_lr must be > 0".into()));
        }
        self.quant
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub dataset: DatasetSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub dataset: DatasetRef,
    pub scheme: SchemeConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub checkpoint: String,
    pub dataset: DatasetRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseCmdConfig {
    pub checkpoint: String,
    pub dataset: DatasetRef,
    #[serde(default)]
    pub support: Option<Vec<usize>>,
    #[serde(default = "default_variant")]
    pub variant: FkVariant,
    #[serde(default)]
    pub delta: Option<f64>,
}

fn default_variant() -> FkVariant {
    FkVariant::Ht
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareCmdConfig {
    pub dataset: DatasetRef,
    pub schemes: Vec<SchemeConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitsCmdConfig {
    pub model: ModelKind,
    pub k: usize,
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmtCmdConfig {
    pub reports: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"dataset": {"m": 5, "n": 10, "n_train": 4, "n_test": 2, "bogus": 1}}"#;
        let r: Result<GenDataConfig, _> = serde_json::from_str(text);
        assert!(r.is_err());
    }

    #[test]
    fn scheme_defaults_fill_in() {
        let text = r#"{
            "model": {"k": 5},
            "quant": {"epochs": 10}
        }"#;
        let s: SchemeConfig = serde_json::from_str(text).unwrap();
        assert_eq!(s.model.delta, 1.0);
        assert_eq!(s.quant.lambda0, 0.02);
        assert_eq!(s.quant.decay, 0.9);
        assert_eq!(s.batch_size, 250);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn dataset_ref_accepts_path_or_spec() {
        let p: DatasetRef = serde_json::from_str(r#""some/dir""#).unwrap();
        assert!(matches!(p, DatasetRef::Path(_)));
        let s: DatasetRef =
            serde_json::from_str(r#"{"m": 5, "n": 10, "n_train": 4, "n_test": 2}"#).unwrap();
        assert!(matches!(s, DatasetRef::Spec(_)));
    }

    #[test]
    fn invalid_values_rejected_by_validate() {
        let mut s: SchemeConfig = serde_json::from_str(
            r#"{"model": {"k": 5}, "quant": {"epochs": 1}}"#,
        )
        .unwrap();
        s.model.delta = 1.5;
        assert!(s.validate().is_err());
        s.model.delta = 1.0;
        s.quant.decay = 0.0;
        assert!(s.validate().is_err());
    }
}
