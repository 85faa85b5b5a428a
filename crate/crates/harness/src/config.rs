//! One TOML tree configures every stage. Sections mirror the library config
//! types; keys missing from the file keep their defaults and unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use cab_eval::{EvalConfig, KalmanConfig};
use cab_model::{DebiasConfig, LossConfig, ModelConfig};
use cab_synthworld::DatasetConfig;

use crate::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid override `{0}`, expected key.path=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapleyConfig {
    /// Instances attributed per model, taken from the start of the split;
    /// 0 means all.
    pub max_instances: usize,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self { max_instances: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Training seeds; every variant is trained once per seed.
    pub seeds: Vec<u64>,
    pub split: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], split: "test".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub debias: DebiasConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub kalman: KalmanConfig,
    pub shapley: ShapleyConfig,
    pub experiment: ExperimentConfig,
}

impl Config {
    /// Defaults, then the file at `path`, then each `key.path=value` override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = Value::try_from(Config::default()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
            let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
            merge(&mut tree, user, "")?;
        }
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            set_path(&mut tree, key.trim(), parse_scalar(raw.trim()))?;
        }
        let cfg: Config = tree.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut tree = Value::try_from(Config::default()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        merge(&mut tree, user, "")?;
        let cfg: Config = tree.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.data.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(ConfigError::Invalid)?;
        self.kalman.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let (m, d) = (&self.model, &self.data);
        if m.history_steps != d.history_steps || m.horizon_steps != d.horizon_steps {
            return bad(format!(
                "model expects H={} T={}, data produces H={} T={}",
                m.history_steps, m.horizon_steps, d.history_steps, d.horizon_steps
            ));
        }
        if m.dt != d.sim.dt || m.map_size != d.raster.size {
            return bad(format!(
                "model expects dt={} map {}, data produces dt={} map {}",
                m.dt, m.map_size, d.sim.dt, d.raster.size
            ));
        }
        if self.eval.n_samples == 0 || self.eval.horizons_s.is_empty() {
            return bad("eval needs at least one sample and one horizon".into());
        }
        if self.experiment.seeds.is_empty() {
            return bad("experiment needs at least one seed".into());
        }
        Ok(())
    }
}

fn merge(base: &mut Value, user: Table, prefix: &str) -> Result<(), ConfigError> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let slot = base.as_table_mut().and_then(|t| t.get_mut(&k)).ok_or_else(|| ConfigError::UnknownKey(path.clone()))?;
        match (slot.is_table(), v) {
            (true, Value::Table(t)) => merge(slot, t, &path)?,
            (_, v) => *slot = v,
        }
    }
    Ok(())
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut slot = tree;
    for part in key.split('.') {
        slot = slot
            .as_table_mut()
            .and_then(|t| t.get_mut(part))
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    }
    *slot = value;
    Ok(())
}

/// A TOML value when `raw` parses as one, otherwise a bare string.
fn parse_scalar(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
