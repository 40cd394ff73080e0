use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear model with an unpenalized intercept, fitted in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::shape(format!(
                "ridge model has {} weights, input has {}",
                self.weights.len(),
                x.len()
            )));
        }
        Ok(self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }
}

/// Solves `(Xc^T Xc + alpha I) w = Xc^T yc` on centered data; the intercept
/// restores the means.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<RidgeModel> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::shape(format!("{} rows but {} targets", x.len(), y.len())));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("ridge penalty must be finite and >= 0, got {alpha}")));
    }
    let n = x.len();
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::shape("rows have differing lengths"));
    }
    let means: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - means[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let mut gram = xc.transpose() * &xc;
    for j in 0..p {
        gram[(j, j)] += alpha;
    }
    let rhs = xc.transpose() * yc;
    let singular = || {
        Error::Numeric(format!(
            "normal equations are singular with alpha = {alpha}; use alpha > 0"
        ))
    };
    let chol = nalgebra::Cholesky::new(gram).ok_or_else(singular)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
    if p > 0 && (lo / hi).powi(2) < 1e-14 {
        return Err(singular());
    }
    let w = chol.solve(&rhs);
    let intercept = y_mean - w.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>();
    Ok(RidgeModel { weights: w.iter().copied().collect(), intercept, alpha })
}
