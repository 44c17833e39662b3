//! Run configuration: a JSON document with optional dotted `key=value`
//! overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use spanib_core::corpus::{SurfaceMatch, TagScheme};
use spanib_core::model::ModelConfig;
use spanib_core::training::TrainConfig;

use crate::error::CliError;

/// Corpus locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    #[default]
    Gamma,
    Beta,
}

impl std::str::FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "beta" => Ok(Self::Beta),
            other => Err(CliError::usage(format!("sweep parameter must be gamma or beta, got `{other}`"))),
        }
    }
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gamma => "gamma",
            Self::Beta => "beta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    /// Value of the other coefficient; `None` keeps the configured weight.
    pub fixed: Option<f64>,
    pub seeds: Vec<u64>,
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            param: SweepParam::Gamma,
            grid: vec![0.0, 1e-5, 1e-4, 1e-3, 1e-2],
            fixed: Some(1e-3),
            seeds: vec![0, 1, 2],
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataPaths,
    pub scheme: TagScheme,
    pub surface_match: SurfaceMatch,
    pub sweep: SweepConfig,
}

impl RunConfig {
    /// Defaults, then the JSON file, then each `key=value` override.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            let user: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
            merge(&mut value, user);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::usage(format!("invalid configuration: {e}")))?;
        cfg.model.validate().map_err(CliError::from)?;
        cfg.train.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets a dotted path such as `train.weights.gamma=0.1`. The value is read as
/// JSON when possible and as a plain string otherwise.
pub fn apply_override(value: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override `{assignment}` is not key=value")))?;
    let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| CliError::usage(format!("`{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(CliError::usage(format!("unknown configuration key `{key}`")));
        }
        slot = obj.get_mut(*part).expect("checked");
    }
    *slot = parsed;
    Ok(())
}
