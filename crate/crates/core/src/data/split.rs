use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Both segments of a temporal split must hold at least one full window.
pub const MIN_SEGMENT_WEEKS: usize = 16;

/// Chronological train/test partition of a panel, as index ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSplit {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl TemporalSplit {
    /// Splits the training range into (fit, early-stopping holdout), the
    /// holdout being the last `holdout_frac` of the training weeks.
    pub fn early_stopping(&self, holdout_frac: f64) -> Result<(Range<usize>, Range<usize>)> {
        holdout_split(self.train.clone(), holdout_frac)
    }
}

pub(crate) fn holdout_split(
    range: Range<usize>,
    holdout_frac: f64,
) -> Result<(Range<usize>, Range<usize>)> {
    if !(0.0..1.0).contains(&holdout_frac) {
        return Err(Error::invalid(format!("holdout fraction {holdout_frac} not in [0, 1)")));
    }
    let len = range.len();
    let holdout = (len as f64 * holdout_frac).round() as usize;
    let cut = range.end - holdout;
    Ok((range.start..cut, cut..range.end))
}

/// Chronological split: the first `round(n * train_frac)` weeks train, the
/// rest test. No shuffling.
pub fn temporal_split(n_weeks: usize, train_frac: f64) -> Result<TemporalSplit> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_frac} not in (0, 1)")));
    }
    let n_train = (n_weeks as f64 * train_frac).round() as usize;
    let n_test = n_weeks - n_train;
    if n_train < MIN_SEGMENT_WEEKS || n_test < MIN_SEGMENT_WEEKS {
        return Err(Error::invalid(format!(
            "panel of {n_weeks} weeks too short for a {train_frac} split \
             (train {n_train}, test {n_test}; each needs {MIN_SEGMENT_WEEKS})"
        )));
    }
    Ok(TemporalSplit { train: 0..n_train, test: n_train..n_weeks })
}
