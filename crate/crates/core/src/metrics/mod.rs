//! Point-forecast metrics, seasonal timing error and paired bootstrap
//! comparison of per-state scores.

mod bootstrap;

pub use bootstrap::{bootstrap_compare, signed_log, BootstrapSummary, MetricKind};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::{EpiWeek, WEEKS_PER_YEAR};
use crate::error::{Error, Result};

/// Guard added to the MARE denominator.
pub const MARE_EPS: f64 = 1e-8;

/// First week of an epidemic season; a season runs from this week to the
/// week before it in the following year.
pub const SEASON_START_WEEK: u32 = 27;

/// Resolution to which COG values and timing errors are reported, in weeks.
pub const COG_RESOLUTION: f64 = 1e-9;

fn check_pair(y: &[f64], yhat: &[f64], min_len: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::shape(format!("{} observations but {} predictions", y.len(), yhat.len())));
    }
    if y.len() < min_len {
        return Err(Error::invalid(format!("need at least {min_len} points, got {}", y.len())));
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in metric input".into()));
    }
    Ok(())
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 2)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Coefficient of determination; undefined (error) for constant `y`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 2)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("r2 is undefined for a constant series"));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Ratio-of-sums relative error `sum|y - yhat| / (sum y + eps)`.
pub fn mare(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 1)?;
    if y.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("mare needs non-negative observations"));
    }
    let num: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(num / (y.iter().sum::<f64>() + MARE_EPS))
}

fn quantize(v: f64) -> f64 {
    (v / COG_RESOLUTION).round() * COG_RESOLUTION
}

/// Incidence-weighted circular mean week, in `(0, 52]`.
///
/// Each week maps to the angle `2 pi w / 52`; weeks past mid-year use the
/// equivalent negative offset so that mirror-image weeks cancel exactly.
pub fn cog(weeks: &[u32], values: &[f64]) -> Result<f64> {
    if weeks.len() != values.len() || weeks.is_empty() {
        return Err(Error::shape("cog needs one value per week"));
    }
    let period = WEEKS_PER_YEAR as f64;
    let (mut s, mut c, mut total) = (0.0, 0.0, 0.0);
    for (&w, &v) in weeks.iter().zip(values) {
        if !(1..=WEEKS_PER_YEAR).contains(&w) {
            return Err(Error::invalid(format!("week {w} out of range")));
        }
        if v < 0.0 || !v.is_finite() {
            return Err(Error::invalid(format!("cog weight {v} must be finite and non-negative")));
        }
        let offset = if w > WEEKS_PER_YEAR / 2 { w as f64 - period } else { w as f64 };
        let theta = 2.0 * PI * offset / period;
        s += v * theta.sin();
        c += v * theta.cos();
        total += v;
    }
    if total <= 0.0 {
        return Err(Error::invalid("cog of a season with zero incidence"));
    }
    if s == 0.0 && c == 0.0 {
        return Err(Error::Numeric("season mass has no preferred direction".into()));
    }
    let w = quantize((s.atan2(c) / (2.0 * PI) * period).rem_euclid(period));
    Ok(if w <= 0.0 || w >= period { period } else { w })
}

/// Circular distance between two COG weeks, `min(|d|, 52 - |d|)`.
pub fn cog_error(a: f64, b: f64) -> f64 {
    let period = WEEKS_PER_YEAR as f64;
    let d = (a - b).abs().rem_euclid(period);
    quantize(d.min(period - d))
}

/// Season label (year in which the season starts) for an epidemiological week.
pub fn season_of(week: EpiWeek) -> i32 {
    if week.week >= SEASON_START_WEEK {
        week.year
    } else {
        week.year - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonCog {
    pub season: i32,
    pub weeks: usize,
    pub observed_cog: f64,
    pub predicted_cog: f64,
    pub error: f64,
}

/// COG comparison for every season touched by `weeks`. Seasons where either
/// series has no mass are skipped.
pub fn seasonal_cog_errors(weeks: &[EpiWeek], observed: &[f64], predicted: &[f64]) -> Result<Vec<SeasonCog>> {
    if weeks.len() != observed.len() || weeks.len() != predicted.len() {
        return Err(Error::shape("seasonal cog inputs differ in length"));
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < weeks.len() {
        let season = season_of(weeks[i]);
        let mut j = i;
        while j < weeks.len() && season_of(weeks[j]) == season {
            j += 1;
        }
        let wk: Vec<u32> = weeks[i..j].iter().map(|w| w.week).collect();
        if let (Ok(o), Ok(p)) = (cog(&wk, &observed[i..j]), cog(&wk, &predicted[i..j])) {
            out.push(SeasonCog { season, weeks: j - i, observed_cog: o, predicted_cog: p, error: cog_error(o, p) });
        }
        i = j;
    }
    Ok(out)
}

/// Metrics for one state's evaluated weeks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub state_id: String,
    pub n_points: usize,
    pub mse: f64,
    /// `None` when the observed series is constant.
    pub r2: Option<f64>,
    pub mare: f64,
    pub cog: Vec<SeasonCog>,
}

impl MetricReport {
    pub fn compute(state_id: &str, weeks: &[EpiWeek], observed: &[f64], predicted: &[f64]) -> Result<Self> {
        let r2 = match r2(observed, predicted) {
            Ok(v) => Some(v),
            Err(Error::InvalidInput(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            state_id: state_id.to_string(),
            n_points: observed.len(),
            mse: mse(observed, predicted)?,
            r2,
            mare: mare(observed, predicted)?,
            cog: seasonal_cog_errors(weeks, observed, predicted)?,
        })
    }
}
