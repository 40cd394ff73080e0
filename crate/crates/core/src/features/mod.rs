//! Per-week feature vectors, Stage-1 contexts and Stage-2 windows.
//!
//! The exogenous vector for week `t` holds base meteorology, calendar
//! encodings, engineered epidemiological indicators and lagged weather. The
//! Stage-2 window appends, for every row, the four incidence lag channels
//! (observed or synthesized) and optionally a state embedding.

mod scaler;
mod schema;
mod window;

pub use scaler::MinMaxScaler;
pub use schema::{FeatureRole, FeatureSchema, FeatureSource, FeatureSpec};
pub use window::{build_window, stage1_context, FeatureWindow, LagSource};

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{Variable, WeeklyPanel, WEEKS_PER_YEAR};
use crate::error::{Error, Result};
use crate::stats::percentile;

/// (sin, cos, holiday) for a week of year in 1..=52.
pub fn calendar_features(week: u32, holiday: bool) -> Result<[f64; 3]> {
    if !(1..=WEEKS_PER_YEAR).contains(&week) {
        return Err(Error::invalid(format!("week {week} outside 1..=52")));
    }
    let angle = 2.0 * PI * week as f64 / WEEKS_PER_YEAR as f64;
    Ok([angle.sin(), angle.cos(), if holiday { 1.0 } else { 0.0 }])
}

/// (extreme_cold, temp_range, precip_intensity).
///
/// `q10` is the 10th percentile of training minimum temperature.
pub fn epi_features(tmin: f64, tmax: f64, prcp: f64, awnd: f64, q10: f64) -> [f64; 3] {
    let extreme_cold = if tmin < q10 { 1.0 } else { 0.0 };
    [extreme_cold, tmax - tmin, prcp * awnd]
}

/// Value at `t - offset`, `None` where the history does not reach.
pub fn weather_lags(values: &[f64], offset: usize) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|t| t.checked_sub(offset).map(|s| values[s]))
        .collect()
}

/// 10th percentile of minimum temperature over the training range.
pub fn cold_threshold(panel: &WeeklyPanel, train: Range<usize>) -> Result<f64> {
    if train.is_empty() || train.end > panel.len() {
        return Err(Error::invalid(format!(
            "training range {train:?} invalid for panel of {}",
            panel.len()
        )));
    }
    let tmin: Vec<f64> = panel.records()[train].iter().map(|r| r.tmin).collect();
    Ok(percentile(&tmin, 0.10))
}

/// Dense row-major matrix of per-week features.
///
/// Rows before `first_usable` lack weather-lag history and hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    first_usable: usize,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>, first_usable: usize) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::shape(format!(
                "feature matrix {rows}x{dim} given {} values",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data, first_usable })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn first_usable(&self) -> usize {
        self.first_usable
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn is_usable(&self, t: usize) -> bool {
        t >= self.first_usable && t < self.rows
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Raw (unscaled) exogenous features for every week of `panel`.
pub fn exogenous_features(panel: &WeeklyPanel, schema: &FeatureSchema, q10: f64) -> Result<FeatureMatrix> {
    let n = panel.len();
    let dim = schema.exogenous_dim();
    let first_usable = schema.max_weather_lag();
    let columns: Vec<(Variable, Vec<f64>)> = [Variable::Tmin, Variable::Tmax, Variable::Prcp]
        .into_iter()
        .map(|v| (v, panel.column(v)))
        .collect();
    let column = |v: Variable| -> &[f64] {
        &columns.iter().find(|(c, _)| *c == v).expect("lagged variables are tmin/tmax/prcp").1
    };

    let mut data = Vec::with_capacity(n * dim);
    for (t, rec) in panel.records().iter().enumerate() {
        let [sin, cos, holiday] = calendar_features(rec.epi_week.week, rec.holiday)?;
        let [cold, range, intensity] = epi_features(rec.tmin, rec.tmax, rec.prcp, rec.awnd, q10);
        for spec in schema.exogenous() {
            let v = match spec.source {
                FeatureSource::Raw(var) => rec.get(var),
                FeatureSource::WeekSin => sin,
                FeatureSource::WeekCos => cos,
                FeatureSource::Holiday => holiday,
                FeatureSource::ExtremeCold => cold,
                FeatureSource::TempRange => range,
                FeatureSource::PrecipIntensity => intensity,
                FeatureSource::Lagged { var, offset } => {
                    if !matches!(var, Variable::Tmin | Variable::Tmax | Variable::Prcp) {
                        return Err(Error::invalid(format!("weather lag on {}", var.name())));
                    }
                    t.checked_sub(offset).map_or(f64::NAN, |s| column(var)[s])
                }
            };
            data.push(v);
        }
    }
    FeatureMatrix::new(n, dim, data, first_usable.min(n))
}

/// Everything fitted on a state's training segment that turns a panel into
/// scaled model inputs: the schema, the cold threshold and the scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub schema: FeatureSchema,
    pub q10: f64,
    pub scaler: MinMaxScaler,
}

impl FeaturePipeline {
    /// Fits the cold threshold and scaler on `train` only.
    pub fn fit(panel: &WeeklyPanel, train: Range<usize>, schema: FeatureSchema) -> Result<Self> {
        let q10 = cold_threshold(panel, train.clone())?;
        let raw = exogenous_features(panel, &schema, q10)?;
        let usable = train.start.max(raw.first_usable())..train.end;
        if usable.is_empty() {
            return Err(Error::invalid(format!(
                "training range {train:?} has no rows with full weather-lag history"
            )));
        }
        let mut scaler = MinMaxScaler::new();
        scaler.fit_features(&raw, usable)?;
        let targets: Vec<f64> = panel.records()[train.clone()]
            .iter()
            .filter_map(|r| r.incidence)
            .collect();
        scaler.fit_target(&targets)?;
        Ok(Self { schema, q10, scaler })
    }

    /// Scaled exogenous features for every week of `panel`.
    pub fn transform(&self, panel: &WeeklyPanel) -> Result<FeatureMatrix> {
        let raw = exogenous_features(panel, &self.schema, self.q10)?;
        self.scaler.transform_features(&raw)
    }

    /// Scaled observed incidence, `None` where unobserved.
    pub fn scaled_incidence(&self, panel: &WeeklyPanel) -> Result<Vec<Option<f64>>> {
        panel
            .incidence()
            .into_iter()
            .map(|y| y.map(|v| self.scaler.scale_target(v)).transpose())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticScenario};

    #[test]
    fn calendar_quarter_and_full_year() {
        let [s, c, h] = calendar_features(13, true).unwrap();
        assert!((s - 1.0).abs() < 1e-15 && c.abs() < 1e-15 && h == 1.0);
        let [s, c, _] = calendar_features(52, false).unwrap();
        assert!(s.abs() < 1e-15 && (c - 1.0).abs() < 1e-15);
        assert!(calendar_features(0, false).is_err());
        assert!(calendar_features(53, false).is_err());
    }

    #[test]
    fn calendar_week_seven_matches_reference() {
        // sin(14*pi/52), cos(14*pi/52) to 20 digits.
        let [s, c, _] = calendar_features(7, false).unwrap();
        assert!((s - 0.748510748171101_f64).abs() < 1e-12, "{s}");
        assert!((c - 0.663122658240795_f64).abs() < 1e-12, "{c}");
    }

    #[test]
    fn epi_feature_arithmetic() {
        assert_eq!(epi_features(-10.0, 0.0, 0.0, 0.0, -5.0)[0], 1.0);
        assert_eq!(epi_features(-4.0, 0.0, 0.0, 0.0, -5.0)[0], 0.0);
        assert_eq!(epi_features(3.0, 10.0, 0.0, 0.0, 0.0)[1], 7.0);
        assert_eq!(epi_features(0.0, 0.0, 2.0, 3.0, 0.0)[2], 6.0);
    }

    #[test]
    fn weather_lag_shift_and_boundary() {
        let series: Vec<f64> = (1..=20).map(f64::from).collect();
        let lag7 = weather_lags(&series, 7);
        // One-based t=8 is index 7.
        assert_eq!(lag7[7], Some(1.0));
        let lag14 = weather_lags(&series, 14);
        assert_eq!(lag14[13], None);
        assert_eq!(lag14[14], Some(1.0));
    }

    #[test]
    fn exogenous_matrix_has_schema_width() {
        let panel = &generate_synthetic(&SyntheticScenario::default())[0];
        let schema = FeatureSchema::standard();
        let m = exogenous_features(panel, &schema, 0.0).unwrap();
        assert_eq!(m.dim(), 20);
        assert_eq!(m.first_usable(), 14);
        assert!(m.row(13).iter().any(|v| v.is_nan()));
        assert!(m.row(14).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pipeline_fit_sees_training_rows_only() {
        let panel = &generate_synthetic(&SyntheticScenario::default())[0];
        let a = FeaturePipeline::fit(panel, 0..200, FeatureSchema::standard()).unwrap();
        let poisoned = panel.with_poisoned_incidence(200, 1e9);
        let b = FeaturePipeline::fit(&poisoned, 0..200, FeatureSchema::standard()).unwrap();
        assert_eq!(a, b);
        let m = a.transform(panel).unwrap();
        for t in 14..200 {
            for v in m.row(t) {
                assert!((-1e-12..=1.0 + 1e-12).contains(v));
            }
        }
    }
}
