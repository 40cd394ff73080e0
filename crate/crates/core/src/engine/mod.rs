//! Two-stage forecasting: per-state feature pipelines and Stage-1 boosters
//! feeding synthetic lags to a shared hybrid network.
//!
//! Training windows carry observed incidence in their lag channels. Every
//! forecast past the training data reads Stage-1 predictions instead, so a
//! multi-week rollout never consumes observed incidence and never feeds the
//! network its own outputs.

mod checkpoint;
mod forecast;
mod protocol;
mod transfer;

pub use checkpoint::{load_model, save_model, PIPELINE_FILE};
pub use forecast::{write_forecast_csv, ForecastPoint, ForecastResult, LagMode, McOptions, RolloutPlan, FORECAST_HEADER};
pub use protocol::{forward_chaining_folds, CvFold, TrainProtocol};
pub use transfer::{finetune, pretrain_multistate, pretrain_on_ranges, FinetuneReport, PretrainReport, TransferConfig};

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{temporal_split, TemporalSplit, WeeklyPanel};
use crate::error::{Error, Result};
use crate::features::{build_window, FeatureMatrix, FeaturePipeline, FeatureSchema, LagSource};
use crate::gbt::{fit_gbt, stage1_predictions, stage1_training_pairs, GbtModel, GbtParams};
use crate::net::{fit, HybridNet, NetConfig, TrainConfig, TrainReport, WindowSet};

/// Everything needed to train and run a forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Weather lag offsets in weeks.
    pub weather_lags: Vec<usize>,
    pub lag_orders: Vec<usize>,
    pub window: usize,
    pub stage1_lookback: usize,
    pub protocol: TrainProtocol,
    pub gbt: GbtParams,
    /// `input_dim` is derived from the schema when the network is built.
    pub net: NetConfig,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
    pub mc: McOptions,
    /// Seeds network initialization.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            weather_lags: vec![7, 14],
            lag_orders: vec![1, 2, 3, 4],
            window: 16,
            stage1_lookback: 4,
            protocol: TrainProtocol::default(),
            gbt: GbtParams::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            transfer: TransferConfig::default(),
            mc: McOptions::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Sets every seed (network init, minibatch order, dropout, MC passes).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.mc.seed = seed;
        self
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        if self.window == 0 || self.stage1_lookback == 0 {
            return Err(Error::invalid("window and stage-1 look-back must be positive"));
        }
        if self.lag_orders.is_empty() || self.lag_orders.contains(&0) {
            return Err(Error::invalid("lag orders must be non-empty and positive"));
        }
        let mut s = FeatureSchema::with_weather_lags(&self.weather_lags);
        s.lag_orders = self.lag_orders.clone();
        s.window = self.window;
        s.stage1_lookback = self.stage1_lookback;
        Ok(s)
    }

    pub fn net_config(&self, embedding_dim: Option<usize>) -> Result<NetConfig> {
        let schema = self.schema()?;
        Ok(NetConfig { window: self.window, input_dim: schema.window_dim(), embedding_dim, ..self.net.clone() })
    }
}

/// Per-state preprocessing fitted on that state's training weeks only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateAdapter {
    pub state_id: String,
    pub train_range: Range<usize>,
    pub pipeline: FeaturePipeline,
    pub stage1: GbtModel,
}

/// A panel run through an adapter.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub features: FeatureMatrix,
    pub scaled: Vec<Option<f64>>,
    pub stage1: Vec<Option<f64>>,
}

impl StateAdapter {
    pub fn fit(panel: &WeeklyPanel, train: Range<usize>, schema: FeatureSchema, gbt: &GbtParams) -> Result<Self> {
        if train.end > panel.len() || train.is_empty() {
            return Err(Error::invalid(format!("training range {train:?} outside a {}-week panel", panel.len())));
        }
        let pipeline = FeaturePipeline::fit(panel, train.clone(), schema)?;
        let features = pipeline.transform(panel)?;
        let scaled = pipeline.scaled_incidence(panel)?;
        let lookback = pipeline.schema.stage1_lookback;
        let (x, y) = stage1_training_pairs(&features, &scaled, train.clone(), lookback)?;
        let mut stage1 = fit_gbt(&x, &y, gbt)?;
        stage1.schema_hash = Some(pipeline.schema.hash());
        Ok(Self { state_id: panel.state_id().to_string(), train_range: train, pipeline, stage1 })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.pipeline.schema
    }

    pub(crate) fn prepare(&self, panel: &WeeklyPanel) -> Result<Prepared> {
        if panel.state_id() != self.state_id {
            return Err(Error::UnknownState(format!(
                "adapter for {} applied to {}",
                self.state_id,
                panel.state_id()
            )));
        }
        let features = self.pipeline.transform(panel)?;
        let scaled = self.pipeline.scaled_incidence(panel)?;
        let stage1 = stage1_predictions(&self.stage1, &features, self.schema().stage1_lookback)?;
        Ok(Prepared { features, scaled, stage1 })
    }

    /// Earliest window end for which every row has covariates and lags.
    pub fn first_window_end(&self, mode: LagMode) -> usize {
        let s = self.schema();
        let usable = s.max_weather_lag();
        let lag_start = match mode {
            LagMode::Actual => 0,
            LagMode::Synthetic => usable + s.stage1_lookback,
        };
        (usable + s.window - 1).max(lag_start + s.max_lag_order() + s.window - 1)
    }
}

impl Prepared {
    pub fn window(&self, schema: &FeatureSchema, t: usize, mode: LagMode, state: &str) -> Result<crate::features::FeatureWindow> {
        let lags = match mode {
            LagMode::Actual => LagSource::Actual(&self.scaled),
            LagMode::Synthetic => LagSource::Synthetic(&self.stage1),
        };
        build_window(&self.features, schema, t, lags, None, state)
    }
}

/// Actual-lag training windows whose targets fall in `targets`; windows with
/// an unobserved target or lag are skipped.
pub(crate) fn training_windows(
    adapter: &StateAdapter,
    prep: &Prepared,
    targets: Range<usize>,
    state: Option<usize>,
) -> Result<WindowSet> {
    let schema = adapter.schema();
    let mut set = WindowSet::new(schema.window, schema.window_dim());
    let first = adapter.first_window_end(LagMode::Actual) + 1;
    for target in targets.start.max(first)..targets.end.min(prep.scaled.len()) {
        let Some(y) = prep.scaled[target] else { continue };
        match prep.window(schema, target - 1, LagMode::Actual, &adapter.state_id) {
            Ok(w) => set.push(&w, y, state)?,
            Err(Error::Missing(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}

/// Trained network plus the adapters of every state it can forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub config: PipelineConfig,
    net: HybridNet,
    adapters: BTreeMap<String, StateAdapter>,
}

impl ForecastModel {
    pub(crate) fn from_parts(config: PipelineConfig, net: HybridNet, adapters: Vec<StateAdapter>) -> Result<Self> {
        let adapters: BTreeMap<String, StateAdapter> = adapters.into_iter().map(|a| (a.state_id.clone(), a)).collect();
        for s in net.states() {
            if !adapters.contains_key(s) {
                return Err(Error::UnknownState(format!("embedding row {s} has no adapter")));
            }
        }
        Ok(Self { config, net, adapters })
    }

    pub fn net(&self) -> &HybridNet {
        &self.net
    }

    pub fn adapter(&self, state: &str) -> Result<&StateAdapter> {
        self.adapters.get(state).ok_or_else(|| Error::UnknownState(state.to_string()))
    }

    pub fn adapters(&self) -> impl Iterator<Item = &StateAdapter> {
        self.adapters.values()
    }

    pub fn states(&self) -> Vec<String> {
        self.adapters.keys().cloned().collect()
    }

    /// Embedding row for `state`, or `None` for a single-state network.
    pub(crate) fn state_row(&self, state: &str) -> Result<Option<usize>> {
        if self.net.has_embedding() {
            self.net.state_index(state).map(Some)
        } else {
            self.adapter(state).map(|_| None)
        }
    }
}

/// Validation score of one forward-chaining fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFoldReport {
    /// Window end indices used for fitting and for validation.
    pub train_ends: Vec<usize>,
    pub validation_ends: Vec<usize>,
    pub best_epoch: Option<usize>,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub state_id: String,
    pub split: TemporalSplit,
    pub fit_range: Range<usize>,
    pub holdout_range: Range<usize>,
    pub fit_window_ends: Vec<usize>,
    pub holdout_window_ends: Vec<usize>,
    /// Final training MSE of the Stage-1 booster (scaled units).
    pub stage1_train_mse: Option<f64>,
    pub fit: TrainReport,
    pub cv: Vec<CvFoldReport>,
}

/// Trains on the leading `train_frac` of `panel`.
pub fn train_pipeline(panel: &WeeklyPanel, config: &PipelineConfig) -> Result<(ForecastModel, TrainingReport)> {
    let split = temporal_split(panel.len(), config.protocol.train_frac)?;
    train_on_range(panel, split, config)
}

/// Trains on `split.train`; `split.test` is recorded but never read.
pub fn train_on_range(
    panel: &WeeklyPanel,
    split: TemporalSplit,
    config: &PipelineConfig,
) -> Result<(ForecastModel, TrainingReport)> {
    let adapter = StateAdapter::fit(panel, split.train.clone(), config.schema()?, &config.gbt)?;
    let prep = adapter.prepare(panel)?;
    let (fit_range, holdout_range) = split.early_stopping(config.protocol.holdout_frac)?;
    let fit_set = training_windows(&adapter, &prep, fit_range.clone(), None)?;
    let val_set = training_windows(&adapter, &prep, holdout_range.clone(), None)?;
    if fit_set.is_empty() {
        return Err(Error::invalid(format!(
            "no complete training windows in {fit_range:?}; the first needs target week {}",
            adapter.first_window_end(LagMode::Actual) + 1
        )));
    }
    let net_config = config.net_config(None)?;

    let mut cv = Vec::new();
    if config.protocol.cv_folds > 0 {
        let mut all = fit_set.clone();
        all.extend(&val_set)?;
        for (k, fold) in forward_chaining_folds(all.len(), config.protocol.cv_folds)?.into_iter().enumerate() {
            let tr = all.subset(&fold.train);
            let va = all.subset(&fold.validation);
            let mut net = HybridNet::new(net_config.clone(), &[], config.seed.wrapping_add(1 + k as u64))?;
            let rep = fit(&mut net, &tr, Some(&va), &TrainConfig { track_train_mse: false, ..config.train.clone() }, None)?;
            cv.push(CvFoldReport {
                train_ends: tr.ends.clone(),
                validation_ends: va.ends.clone(),
                best_epoch: rep.best_epoch,
                validation_mse: va.mse(&net)?,
            });
        }
    }

    let mut net = HybridNet::new(net_config, &[], config.seed)?;
    let report = fit(&mut net, &fit_set, Some(&val_set), &config.train, None)?;
    let training = TrainingReport {
        state_id: panel.state_id().to_string(),
        split,
        fit_range,
        holdout_range,
        fit_window_ends: fit_set.ends.clone(),
        holdout_window_ends: val_set.ends.clone(),
        stage1_train_mse: adapter.stage1.train_mse.last().copied(),
        fit: report,
        cv,
    };
    Ok((ForecastModel::from_parts(config.clone(), net, vec![adapter])?, training))
}
