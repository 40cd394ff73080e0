use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::GbtModel;
use crate::error::{Error, Result};
use crate::features::{stage1_context, FeatureMatrix};

/// `(Z_t, y_{t+1})` pairs with both `t` and `t + 1` inside `range`.
///
/// Weeks whose target is unobserved are skipped.
pub fn stage1_training_pairs(
    features: &FeatureMatrix,
    targets: &[Option<f64>],
    range: Range<usize>,
    lookback: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let first = features.first_usable() + lookback - 1;
    let mut contexts = Vec::new();
    let mut ys = Vec::new();
    for t in range.start.max(first)..range.end.saturating_sub(1) {
        if let Some(y) = targets.get(t + 1).copied().flatten() {
            contexts.push(stage1_context(features, t, lookback)?);
            ys.push(y);
        }
    }
    if contexts.is_empty() {
        return Err(Error::invalid(format!("no stage-1 training pairs in {range:?}")));
    }
    Ok((contexts, ys))
}

/// Stage-1 prediction series: `series[s] = f(Z_{s-1})`, the label-free
/// estimate of incidence at week `s`. `None` where no context exists.
///
/// Reads exogenous features only.
pub fn stage1_predictions(model: &GbtModel, features: &FeatureMatrix, lookback: usize) -> Result<Vec<Option<f64>>> {
    let first = features.first_usable() + lookback - 1;
    let mut out = vec![None; features.rows()];
    for s in first + 1..features.rows() {
        let z = stage1_context(features, s - 1, lookback)?;
        out[s] = Some(model.predict(&z)?);
    }
    Ok(out)
}

/// Synthetic lag quartet per requested week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagTable {
    pub orders: Vec<usize>,
    pub indices: Vec<usize>,
    /// `lags[k][j]` is the Stage-1 prediction at `indices[k] - orders[j]`.
    pub lags: Vec<Vec<f64>>,
}

pub fn synthesize_lags(
    model: &GbtModel,
    features: &FeatureMatrix,
    lookback: usize,
    orders: &[usize],
    indices: &[usize],
) -> Result<LagTable> {
    let series = stage1_predictions(model, features, lookback)?;
    let mut lags = Vec::with_capacity(indices.len());
    for &t in indices {
        let row = orders
            .iter()
            .map(|&l| {
                t.checked_sub(l)
                    .and_then(|s| series.get(s).copied().flatten())
                    .ok_or_else(|| Error::Missing(format!("stage-1 prediction for lag {l} at index {t}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        lags.push(row);
    }
    Ok(LagTable { orders: orders.to_vec(), indices: indices.to_vec(), lags })
}
