//! Toolkit configuration: nested TOML file, dotted command-line overrides,
//! precedence overrides > file > defaults. Unknown keys are rejected with
//! their path.

use crate::data::augment::AugmentationConfig;
use crate::error::{Error, Result};
use crate::head::LossConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub augment: AugmentationConfig,
}

impl Config {
    /// Start from a preset, then defaults everywhere else.
    pub fn preset(name: &str, n_classes: usize) -> Result<Config> {
        Ok(Config {
            model: ModelConfig::preset(name, n_classes)?,
            loss: LossConfig::for_detectors(if name.starts_with("baseline") { 3 } else { 1 }),
            ..Default::default()
        })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config("config", e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Apply `key.path=value` overrides on top of this configuration.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Config> {
        let mut value =
            toml::Value::try_from(self).map_err(|e| Error::config("config", e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::config(ov.clone(), "override must be key.path=value"))?;
            apply_override(&mut value, key.trim(), raw.trim())?;
        }
        let text = toml::to_string(&value).map_err(|e| Error::config("config", e.to_string()))?;
        parse_config(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.loss.validate(self.model.head.n_detectors)?;
        Ok(())
    }
}

fn parse_config(text: &str) -> Result<Config> {
    let cfg: Config = toml::from_str(text).map_err(|e| {
        // toml errors carry the offending key path in their message
        Error::config("config", e.to_string())
    })?;
    Ok(cfg)
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty path segment"));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .get_mut(part)
            .ok_or_else(|| Error::config(key, format!("unknown section `{part}`")))?;
    }
    let last = parts[parts.len() - 1];
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::config(key, "path does not lead to a table"))?;

    // parse in line with the type being replaced; optional fields are
    // absent from the tree, so fall back to inferring the type (the final
    // schema deserialization still rejects genuinely unknown keys)
    let new = match table.get(last) {
        Some(toml::Value::Integer(_)) => toml::Value::Integer(
            raw.parse()
                .map_err(|_| Error::config(key, format!("expected integer, got {raw:?}")))?,
        ),
        Some(toml::Value::Float(_)) => toml::Value::Float(
            raw.parse()
                .map_err(|_| Error::config(key, format!("expected number, got {raw:?}")))?,
        ),
        Some(toml::Value::Boolean(_)) => toml::Value::Boolean(
            raw.parse()
                .map_err(|_| Error::config(key, format!("expected true/false, got {raw:?}")))?,
        ),
        Some(toml::Value::String(_)) => toml::Value::String(raw.to_string()),
        _ => toml::from_str::<toml::Value>(&format!("v = {raw}"))
            .ok()
            .and_then(|v| v.get("v").cloned())
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
    };
    table.insert(last.to_string(), new);
    Ok(())
}
