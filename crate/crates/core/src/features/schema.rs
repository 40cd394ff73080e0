use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Variable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    BaseMeteorology,
    Calendar,
    Epidemiological,
    WeatherLag,
    SyntheticLag,
    StateEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Raw(Variable),
    WeekSin,
    WeekCos,
    Holiday,
    ExtremeCold,
    TempRange,
    PrecipIntensity,
    Lagged { var: Variable, offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub role: FeatureRole,
    pub source: FeatureSource,
}

impl FeatureSpec {
    fn new(name: impl Into<String>, role: FeatureRole, source: FeatureSource) -> Self {
        Self { name: name.into(), role, source }
    }
}

/// Ordered feature layout, serialized with every trained model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    exogenous: Vec<FeatureSpec>,
    pub lag_orders: Vec<usize>,
    pub window: usize,
    pub stage1_lookback: usize,
}

impl FeatureSchema {
    /// 20 exogenous columns plus four incidence lag channels.
    pub fn standard() -> Self {
        Self::with_weather_lags(&[7, 14])
    }

    pub fn with_weather_lags(offsets: &[usize]) -> Self {
        use FeatureRole::*;
        use FeatureSource::*;
        let mut exogenous: Vec<FeatureSpec> = Variable::CLIMATE
            .iter()
            .chain(&[Variable::Population])
            .map(|&v| FeatureSpec::new(v.name(), BaseMeteorology, Raw(v)))
            .collect();
        exogenous.push(FeatureSpec::new("week_sin", Calendar, WeekSin));
        exogenous.push(FeatureSpec::new("week_cos", Calendar, WeekCos));
        exogenous.push(FeatureSpec::new("holiday", Calendar, Holiday));
        exogenous.push(FeatureSpec::new("extreme_cold", Epidemiological, ExtremeCold));
        exogenous.push(FeatureSpec::new("temp_range", Epidemiological, TempRange));
        exogenous.push(FeatureSpec::new("precip_intensity", Epidemiological, PrecipIntensity));
        for var in [Variable::Tmin, Variable::Tmax, Variable::Prcp] {
            for &offset in offsets {
                exogenous.push(FeatureSpec::new(
                    format!("{}_lag{offset}", var.name()),
                    WeatherLag,
                    Lagged { var, offset },
                ));
            }
        }
        Self { exogenous, lag_orders: vec![1, 2, 3, 4], window: 16, stage1_lookback: 4 }
    }

    /// Custom exogenous layout, for callers that drop unavailable variables.
    pub fn custom(exogenous: Vec<FeatureSpec>, lag_orders: Vec<usize>, window: usize, stage1_lookback: usize) -> Self {
        Self { exogenous, lag_orders, window, stage1_lookback }
    }

    pub fn exogenous(&self) -> &[FeatureSpec] {
        &self.exogenous
    }

    pub fn exogenous_dim(&self) -> usize {
        self.exogenous.len()
    }

    /// Per-row width of a Stage-2 window, before any state embedding.
    pub fn window_dim(&self) -> usize {
        self.exogenous.len() + self.lag_orders.len()
    }

    pub fn max_lag_order(&self) -> usize {
        self.lag_orders.iter().copied().max().unwrap_or(0)
    }

    /// Index of the first week with complete weather-lag history.
    pub fn max_weather_lag(&self) -> usize {
        self.exogenous
            .iter()
            .filter_map(|s| match s.source {
                FeatureSource::Lagged { offset, .. } => Some(offset),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Column names of one window row, lag channels last.
    pub fn window_names(&self) -> Vec<String> {
        self.exogenous
            .iter()
            .map(|s| s.name.clone())
            .chain(self.lag_orders.iter().map(|l| format!("incidence_lag{l}")))
            .collect()
    }

    /// Stable content hash, stored alongside model parameters.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}
