//! Run configuration: pipeline hyperparameters plus paths, stored as JSON
//! with flat dotted keys (`"train.learning_rate": 0.0006`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use epicast::engine::PipelineConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: String,
    pub paths: Paths,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn new(task: &str) -> Self {
        Self { task: task.to_string(), paths: Paths::default(), pipeline: PipelineConfig::default() }
    }

    pub fn to_flat(&self) -> Result<BTreeMap<String, Value>> {
        Ok(flatten(&serde_json::to_value(self)?))
    }

    /// Applies `overrides` on top of `self`. Every key must already exist.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, Value>) -> Result<Self> {
        let mut flat = self.to_flat()?;
        for (k, v) in overrides {
            match flat.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => bail!("unknown config key `{k}`"),
            }
        }
        serde_json::from_value(unflatten(&flat)).context("config values do not fit their keys")
    }

    /// Writes the resolved configuration as flat JSON.
    pub fn write(&self, path: &Path) -> Result<()> {
        let flat = self.to_flat()?;
        std::fs::write(path, serde_json::to_string_pretty(&flat)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Reads a config file. Nested objects are accepted and flattened.
pub fn read_overrides(path: &Path) -> Result<BTreeMap<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if !value.is_object() {
        bail!("config {} must hold a JSON object", path.display());
    }
    Ok(flatten(&value))
}

/// Parses `key=value`; the value is read as JSON when possible, else as a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let Some((k, v)) = s.split_once('=') else { bail!("expected KEY=VALUE, got `{s}`") };
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

pub fn flatten(value: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

pub fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted keys never collide with leaves");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}
