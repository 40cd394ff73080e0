use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Split fractions and cross-validation settings for a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProtocol {
    /// Leading share of each panel used for training.
    pub train_frac: f64,
    /// Trailing share of the training weeks held out for early stopping.
    pub holdout_frac: f64,
    /// Forward-chaining folds over the training windows; 0 disables them.
    pub cv_folds: usize,
}

impl Default for TrainProtocol {
    fn default() -> Self {
        Self { train_frac: 0.7, holdout_frac: 0.2, cv_folds: 3 }
    }
}

/// Sample positions (into a chronologically ordered window set) for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvFold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Expanding-window folds: the samples are cut into `k + 1` blocks; fold `i`
/// trains on everything before block `i + 1` and validates on that block.
/// The first block absorbs the remainder.
pub fn forward_chaining_folds(n: usize, k: usize) -> Result<Vec<CvFold>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let block = n / (k + 1);
    if block == 0 {
        return Err(Error::invalid(format!("{n} samples cannot form {k} forward-chaining folds")));
    }
    let first = n - k * block;
    Ok((0..k)
        .map(|i| {
            let cut = first + i * block;
            CvFold { train: (0..cut).collect(), validation: (cut..cut + block).collect() }
        })
        .collect())
}
