use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, FeatureSchema};
use crate::error::{Error, Result};

/// Where a window's incidence lag channels come from.
#[derive(Debug, Clone, Copy)]
pub enum LagSource<'a> {
    /// Observed (scaled) incidence, indexed by week.
    Actual(&'a [Option<f64>]),
    /// Stage-1 predictions, `series[s]` estimating incidence at week `s`.
    Synthetic(&'a [Option<f64>]),
}

impl LagSource<'_> {
    fn lookup(&self, index: usize) -> Result<f64> {
        let (series, what) = match self {
            LagSource::Actual(s) => (s, "observed incidence"),
            LagSource::Synthetic(s) => (s, "stage-1 prediction"),
        };
        series
            .get(index)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Missing(format!("{what} at index {index}")))
    }
}

/// A `window x dim` model input ending at week `end_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub values: Vec<f64>,
    pub rows: usize,
    pub dim: usize,
    pub end_index: usize,
    pub state_id: String,
}

impl FeatureWindow {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }
}

/// Concatenation `[x_{t-L+1}, ..., x_t]` for the Stage-1 regressor, where L is
/// the schema's Stage-1 look-back.
pub fn stage1_context(features: &FeatureMatrix, t: usize, lookback: usize) -> Result<Vec<f64>> {
    if lookback == 0 || t >= features.rows() {
        return Err(Error::invalid(format!("context index {t} out of range")));
    }
    let first = features.first_usable() + lookback - 1;
    if t < first {
        return Err(Error::invalid(format!(
            "stage-1 context at {t} needs history back to {}, first usable week is {}",
            t as i64 - lookback as i64 + 1,
            features.first_usable()
        )));
    }
    let mut z = Vec::with_capacity(lookback * features.dim());
    for s in t + 1 - lookback..=t {
        z.extend_from_slice(features.row(s));
    }
    Ok(z)
}

/// Builds the Stage-2 window ending at week `t`.
///
/// Each row `tau` holds the exogenous features of week `tau`, then the lag
/// channels `lag_source[tau - l]` for every lag order `l`, then the embedding
/// if given.
pub fn build_window(
    features: &FeatureMatrix,
    schema: &FeatureSchema,
    t: usize,
    lags: LagSource<'_>,
    embedding: Option<&[f64]>,
    state_id: &str,
) -> Result<FeatureWindow> {
    let len = schema.window;
    if features.dim() != schema.exogenous_dim() {
        return Err(Error::shape(format!(
            "features have {} columns, schema expects {}",
            features.dim(),
            schema.exogenous_dim()
        )));
    }
    if t >= features.rows() || t + 1 < len || t + 1 - len < features.first_usable() {
        return Err(Error::invalid(format!(
            "window of {len} weeks ending at {t} lacks covariate history (first usable week {})",
            features.first_usable()
        )));
    }
    let emb = embedding.unwrap_or(&[]);
    let dim = schema.window_dim() + emb.len();
    let mut values = Vec::with_capacity(len * dim);
    for tau in t + 1 - len..=t {
        values.extend_from_slice(features.row(tau));
        for &l in &schema.lag_orders {
            let src = tau.checked_sub(l).ok_or_else(|| {
                Error::Missing(format!("lag {l} at week {tau} reaches before the series start"))
            })?;
            values.push(lags.lookup(src)?);
        }
        values.extend_from_slice(emb);
    }
    Ok(FeatureWindow { values, rows: len, dim, end_index: t, state_id: state_id.to_string() })
}
