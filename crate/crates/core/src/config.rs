//! TOML configuration for data handling, the model, training and serving.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::sha256_hex;
use crate::error::{Error, Result};
use crate::evaluation::{ExperimentConfig, LONG_TAIL_THRESHOLD};
use crate::ingest::{LabelMode, VehicleParams};
use crate::model::ModelConfig;
use crate::training::MetaConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub label_mode: LabelMode,
    /// Seconds east of UTC for local times.
    pub utc_offset_s: i32,
    pub split_seed: u64,
    pub vehicle: VehicleParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { label_mode: LabelMode::Obd, utc_offset_s: 0, split_seed: 0, vehicle: VehicleParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub fine_tune: bool,
    pub long_tail_threshold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { fine_tune: true, long_tail_threshold: LONG_TAIL_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { addr: "127.0.0.1:8080".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub meta: MetaConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.meta.validate()?;
        self.data.vehicle.check().map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            meta: self.meta.clone(),
            fine_tune: self.eval.fine_tune,
            long_tail_threshold: self.eval.long_tail_threshold,
        }
    }
}
