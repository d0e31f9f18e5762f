use crate::corpus::LanguageSpec;
use crate::error::{DapError, Result};
use crate::model::EncoderConfig;
use crate::objectives::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Neighborhood size for margin scoring.
    pub margin_k: usize,
    /// Mining prefilter size (0 = exact scoring of every pair).
    pub top_m: usize,
    /// Encoding chunk size for frozen-model evaluation.
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            margin_k: 4,
            top_m: 8,
            chunk: 32,
        }
    }
}

/// Everything needed to replay a run. Serialized into every run
/// directory as config.json.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_name: String,
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub data: LanguageSpec,
    pub eval: EvalConfig,
    /// Save a checkpoint every this many steps (0 = only at start/end).
    pub checkpoint_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_name: "run".into(),
            model: EncoderConfig::default(),
            train: TrainConfig::default(),
            data: LanguageSpec::default(),
            eval: EvalConfig::default(),
            checkpoint_interval: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.eval.margin_k == 0 {
            return Err(DapError::Config("eval.margin_k must be at least 1".into()));
        }
        if self.model.vocab < self.data.vocab_size() {
            return Err(DapError::Config(format!(
                "model.vocab {} cannot hold the corpus vocabulary {}",
                self.model.vocab,
                self.data.vocab_size()
            )));
        }
        Ok(())
    }
}

/// Set `key` (dotted path, e.g. "train.rho") in the config. The value
/// string is parsed as JSON, falling back to a plain string. Unknown
/// keys are rejected.
pub fn apply_override(cfg: &mut RunConfig, key: &str, raw: &str) -> Result<()> {
    let mut tree = serde_json::to_value(&*cfg)?;
    let pointer = format!("/{}", key.replace('.', "/"));
    let slot = tree
        .pointer_mut(&pointer)
        .ok_or_else(|| DapError::Config(format!("unknown config key {key:?}")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    *slot = value;
    *cfg = serde_json::from_value(tree)
        .map_err(|e| DapError::Config(format!("bad value for {key:?}: {e}")))?;
    Ok(())
}

/// Load a config: defaults, then a flat dotted-key JSON file, then CLI
/// overrides (which win).
pub fn load_run_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| DapError::Config(format!("{}: not a JSON object: {e}", path.display())))?;
        for (key, value) in map {
            apply_override(&mut cfg, &key, &value.to_string())?;
        }
    }
    for (key, raw) in overrides {
        apply_override(&mut cfg, key, raw)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
