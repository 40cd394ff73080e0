use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Min-max scaler fitted on training statistics only.
///
/// Out-of-range values are not clipped, so unseen extremes scale beyond
/// [0, 1]. A constant training column (min == max) scales to 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    features: Option<Vec<(f64, f64)>>,
    target: Option<(f64, f64)>,
}

fn scale(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

impl MinMaxScaler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit_features(&mut self, matrix: &FeatureMatrix, rows: Range<usize>) -> Result<()> {
        if rows.is_empty() || rows.end > matrix.rows() {
            return Err(Error::invalid(format!("scaler fit rows {rows:?} out of range")));
        }
        let mut out = Vec::with_capacity(matrix.dim());
        for j in 0..matrix.dim() {
            let b = bounds(rows.clone().map(|t| matrix.row(t)[j]))
                .filter(|(lo, hi)| lo.is_finite() && hi.is_finite())
                .ok_or_else(|| Error::invalid(format!("feature column {j} has non-finite training values")))?;
            out.push(b);
        }
        self.features = Some(out);
        Ok(())
    }

    pub fn fit_target(&mut self, values: &[f64]) -> Result<()> {
        let b = bounds(values.iter().copied())
            .ok_or_else(|| Error::invalid("no observed training incidence to fit target scaler"))?;
        self.target = Some(b);
        Ok(())
    }

    pub fn feature_bounds(&self) -> Option<&[(f64, f64)]> {
        self.features.as_deref()
    }

    pub fn target_bounds(&self) -> Option<(f64, f64)> {
        self.target
    }

    pub fn scale_feature(&self, j: usize, v: f64) -> Result<f64> {
        let f = self.features.as_ref().ok_or(Error::NotFitted("feature scaler"))?;
        let b = f.get(j).ok_or_else(|| Error::shape(format!("feature index {j} >= {}", f.len())))?;
        Ok(scale(v, *b))
    }

    /// Scales every row; NaN rows (missing history) stay NaN.
    pub fn transform_features(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        let f = self.features.as_ref().ok_or(Error::NotFitted("feature scaler"))?;
        if f.len() != matrix.dim() {
            return Err(Error::shape(format!(
                "scaler fitted on {} features, matrix has {}",
                f.len(),
                matrix.dim()
            )));
        }
        let mut out = matrix.clone();
        let dim = matrix.dim();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = scale(*v, f[k % dim]);
        }
        Ok(out)
    }

    pub fn scale_target(&self, y: f64) -> Result<f64> {
        let b = self.target.ok_or(Error::NotFitted("target scaler"))?;
        Ok(scale(y, b))
    }

    pub fn invert_target(&self, z: f64) -> Result<f64> {
        let (lo, hi) = self.target.ok_or(Error::NotFitted("target scaler"))?;
        Ok(if hi > lo { z * (hi - lo) + lo } else { lo })
    }

    /// Converts a scaled-space spread (e.g. a standard deviation) to counts.
    pub fn invert_target_spread(&self, spread: f64) -> Result<f64> {
        let (lo, hi) = self.target.ok_or(Error::NotFitted("target scaler"))?;
        Ok(spread * (hi - lo))
    }
}
