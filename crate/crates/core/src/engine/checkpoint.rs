use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ForecastModel, PipelineConfig, StateAdapter};
use crate::autodiff::{load_params, save_params, Manifest};
use crate::error::{Error, Result};
use crate::net::{HybridNet, NetConfig};

pub const PIPELINE_FILE: &str = "pipeline.json";

#[derive(Debug, Serialize, Deserialize)]
struct PipelineDoc {
    format: u32,
    config: PipelineConfig,
    net: NetConfig,
    /// Embedding row order.
    states: Vec<String>,
    adapters: Vec<StateAdapter>,
}

/// Writes network tensors, their manifest and the pipeline description.
pub fn save_model(model: &ForecastModel, dir: &Path) -> Result<Manifest> {
    let schema_hash = model.config.schema()?.hash();
    let manifest = save_params(model.net.params(), dir, Some(&schema_hash))?;
    let doc = PipelineDoc {
        format: 1,
        config: model.config.clone(),
        net: model.net.config().clone(),
        states: model.net.states().to_vec(),
        adapters: model.adapters().cloned().collect(),
    };
    fs::write(dir.join(PIPELINE_FILE), serde_json::to_string_pretty(&doc)?)?;
    Ok(manifest)
}

pub fn load_model(dir: &Path) -> Result<ForecastModel> {
    let (store, manifest) = load_params(dir)?;
    let doc: PipelineDoc = serde_json::from_str(&fs::read_to_string(dir.join(PIPELINE_FILE))?)?;
    let schema_hash = doc.config.schema()?.hash();
    if manifest.schema_hash.as_deref() != Some(schema_hash.as_str()) {
        return Err(Error::invalid("checkpoint was written for a different feature schema"));
    }
    if doc.adapters.iter().any(|a| a.schema().hash() != schema_hash) {
        return Err(Error::invalid("adapter schema differs from the model schema"));
    }
    let net = HybridNet::from_parts(doc.net, &doc.states, &store)?;
    ForecastModel::from_parts(doc.config, net, doc.adapters)
}
