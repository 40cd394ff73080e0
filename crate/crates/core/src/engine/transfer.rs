use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{training_windows, ForecastModel, PipelineConfig, StateAdapter};
use crate::data::{holdout_split, temporal_split, WeeklyPanel};
use crate::error::{Error, Result};
use crate::net::{fit, FreezePlan, HybridNet, TrainConfig, TrainReport, WindowSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub embedding_dim: usize,
    pub freeze: FreezePlan,
    pub finetune_epochs: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { embedding_dim: 16, freeze: FreezePlan::default(), finetune_epochs: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub states: Vec<String>,
    pub train_ranges: Vec<Range<usize>>,
    pub fit_windows: usize,
    pub holdout_windows: usize,
    pub fit: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub state_id: String,
    pub train_range: Range<usize>,
    pub fit_window_ends: Vec<usize>,
    pub holdout_window_ends: Vec<usize>,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub fit: TrainReport,
}

/// Trains one embedding network on several states. Each state gets its own
/// adapter fitted on its leading `train_frac`; windows are pooled and the
/// last `holdout_frac` of every state's training weeks drives early stopping.
pub fn pretrain_multistate(panels: &[WeeklyPanel], config: &PipelineConfig) -> Result<(ForecastModel, PretrainReport)> {
    let ranges = panels
        .iter()
        .map(|p| temporal_split(p.len(), config.protocol.train_frac).map(|s| s.train))
        .collect::<Result<Vec<_>>>()?;
    pretrain_on_ranges(panels, &ranges, config)
}

/// As [`pretrain_multistate`] with explicit training ranges.
pub fn pretrain_on_ranges(
    panels: &[WeeklyPanel],
    ranges: &[Range<usize>],
    config: &PipelineConfig,
) -> Result<(ForecastModel, PretrainReport)> {
    if panels.is_empty() || panels.len() != ranges.len() {
        return Err(Error::invalid("pretraining needs one training range per state"));
    }
    let states: Vec<String> = panels.iter().map(|p| p.state_id().to_string()).collect();
    let schema = config.schema()?;
    let mut adapters = Vec::new();
    let mut fit_set = WindowSet::new(schema.window, schema.window_dim());
    let mut val_set = fit_set.clone();
    for (i, (panel, range)) in panels.iter().zip(ranges).enumerate() {
        let adapter = StateAdapter::fit(panel, range.clone(), schema.clone(), &config.gbt)?;
        let prep = adapter.prepare(panel)?;
        let (fit_r, val_r) = holdout_split(range.clone(), config.protocol.holdout_frac)?;
        let f = training_windows(&adapter, &prep, fit_r, Some(i))?;
        if f.is_empty() {
            return Err(Error::invalid(format!("state {} has no complete training windows", panel.state_id())));
        }
        fit_set.extend(&f)?;
        val_set.extend(&training_windows(&adapter, &prep, val_r, Some(i))?)?;
        adapters.push(adapter);
    }
    let net_config = config.net_config(Some(config.transfer.embedding_dim))?;
    let mut net = HybridNet::new(net_config, &states, config.seed)?;
    let report = fit(&mut net, &fit_set, Some(&val_set), &config.train, None)?;
    let pre = PretrainReport {
        states,
        train_ranges: ranges.to_vec(),
        fit_windows: fit_set.len(),
        holdout_windows: val_set.len(),
        fit: report,
    };
    Ok((ForecastModel::from_parts(config.clone(), net, adapters)?, pre))
}

/// Adapts a pretrained model to `panel`, training only on `train`. The new
/// state's embedding row starts at the mean of the existing rows; groups in
/// the freeze plan keep their pretrained values.
pub fn finetune(model: &ForecastModel, panel: &WeeklyPanel, train: Range<usize>) -> Result<(ForecastModel, FinetuneReport)> {
    let config = &model.config;
    let plan = &config.transfer.freeze;
    let adapter = StateAdapter::fit(panel, train.clone(), config.schema()?, &config.gbt)?;
    let prep = adapter.prepare(panel)?;
    let mut net = model.net.clone();
    let row = if net.has_embedding() { Some(net.add_state(panel.state_id())?) } else { None };
    let (fit_r, val_r) = holdout_split(train.clone(), config.protocol.holdout_frac)?;
    let fit_set = training_windows(&adapter, &prep, fit_r, row)?;
    let val_set = training_windows(&adapter, &prep, val_r, row)?;
    if fit_set.is_empty() {
        return Err(Error::invalid(format!("state {} has no complete fine-tuning windows", panel.state_id())));
    }
    let mask = net.trainable_mask(plan)?;
    let (mut trainable, mut frozen) = (0, 0);
    for (id, _, t) in net.params().iter() {
        if mask[id.index()] {
            trainable += t.len();
        } else {
            frozen += t.len();
        }
    }
    let cfg = TrainConfig {
        learning_rate: plan.learning_rate,
        max_epochs: config.transfer.finetune_epochs,
        ..config.train.clone()
    };
    let report = fit(&mut net, &fit_set, Some(&val_set), &cfg, Some(&mask))?;
    let mut adapters: Vec<StateAdapter> = model.adapters().filter(|a| a.state_id != panel.state_id()).cloned().collect();
    adapters.push(adapter);
    let ft = FinetuneReport {
        state_id: panel.state_id().to_string(),
        train_range: train,
        fit_window_ends: fit_set.ends.clone(),
        holdout_window_ends: val_set.ends.clone(),
        trainable_params: trainable,
        frozen_params: frozen,
        fit: report,
    };
    Ok((ForecastModel::from_parts(config.clone(), net, adapters)?, ft))
}
