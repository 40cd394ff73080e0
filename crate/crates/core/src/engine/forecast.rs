use std::io::Write;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForecastModel, Prepared, StateAdapter};
use crate::autodiff::Tensor;
use crate::data::{EpiWeek, WeeklyPanel};
use crate::error::{Error, Result};
use crate::features::FeatureWindow;
use crate::stats::{mean, percentile_sorted, population_std};

pub const FORECAST_HEADER: &str = "state,year,week,forecast_mean,forecast_std,ci_lo,ci_hi,observed";

/// Which series fills a window's incidence lag channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagMode {
    /// Observed incidence, as during training.
    Actual,
    /// Stage-1 predictions; reads no incidence at all.
    Synthetic,
}

/// Monte Carlo dropout settings. `passes == 0` gives a single dropout-free
/// pass with zero-width intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub passes: usize,
    /// Central interval mass, e.g. 0.95 for the 2.5/97.5 percentiles.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { passes: 50, confidence: 0.95, seed: 0 }
    }
}

impl McOptions {
    pub fn deterministic() -> Self {
        Self { passes: 0, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.passes == 1 {
            return Err(Error::invalid("Monte Carlo dropout needs at least 2 passes (0 disables it)"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid(format!("confidence {} must lie in (0, 1)", self.confidence)));
        }
        Ok(())
    }
}

/// A multi-week forecast launched from week index `start`: targets are
/// `start + 1 ..= start + horizon`, each predicted from the window ending the
/// week before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutPlan {
    pub start: usize,
    pub horizon: usize,
}

impl RolloutPlan {
    pub fn targets(&self) -> Range<usize> {
        self.start + 1..self.start + 1 + self.horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    /// Week index of the forecast target (may equal the panel length).
    pub index: usize,
    pub epi_week: EpiWeek,
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub state_id: String,
    pub mode: LagMode,
    pub mc: McOptions,
    pub points: Vec<ForecastPoint>,
}

impl ForecastResult {
    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    /// Replaces the observed column with values from `panel`.
    pub fn attach_observed(&mut self, panel: &WeeklyPanel) -> Result<()> {
        if panel.state_id() != self.state_id {
            return Err(Error::UnknownState(panel.state_id().to_string()));
        }
        for p in &mut self.points {
            p.observed = panel.records().get(p.index).and_then(|r| r.incidence);
        }
        Ok(())
    }

    /// Observed and forecast means over points with an observation.
    pub fn paired(&self) -> (Vec<EpiWeek>, Vec<f64>, Vec<f64>) {
        let mut w = Vec::new();
        let mut y = Vec::new();
        let mut p = Vec::new();
        for pt in &self.points {
            if let Some(o) = pt.observed {
                w.push(pt.epi_week);
                y.push(o);
                p.push(pt.mean);
            }
        }
        (w, y, p)
    }
}

fn week_at(panel: &WeeklyPanel, index: usize) -> EpiWeek {
    if index < panel.len() {
        panel.week(index)
    } else {
        let mut w = panel.week(panel.len() - 1);
        for _ in panel.len()..=index {
            w = w.next();
        }
        w
    }
}

fn pass_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl ForecastModel {
    /// One-step-ahead forecasts for every week in `targets`.
    pub fn one_step(&self, panel: &WeeklyPanel, targets: Range<usize>, mode: LagMode, mc: &McOptions) -> Result<ForecastResult> {
        let adapter = self.adapter(panel.state_id())?;
        let first = adapter.first_window_end(mode) + 1;
        if targets.start < first {
            return Err(Error::invalid(format!(
                "first forecast target {} precedes the earliest complete window (target {first})",
                targets.start
            )));
        }
        if targets.end > panel.len() + 1 || targets.is_empty() {
            return Err(Error::invalid(format!(
                "forecast targets {targets:?} need covariates through the preceding week of a {}-week panel",
                panel.len()
            )));
        }
        self.forecast(panel, adapter, targets, mode, mc)
    }

    /// Multi-week forecast from `plan.start`. Lags come from Stage-1 only, so
    /// no incidence after (or before) the launch week is read.
    pub fn rollout(&self, panel: &WeeklyPanel, plan: RolloutPlan, mc: &McOptions) -> Result<ForecastResult> {
        if plan.horizon == 0 {
            return Err(Error::invalid("rollout horizon must be positive"));
        }
        if plan.start + plan.horizon > panel.len() {
            return Err(Error::invalid(format!(
                "rollout from week {} over {} weeks needs covariates through index {}, panel has {}",
                plan.start,
                plan.horizon,
                plan.start + plan.horizon - 1,
                panel.len()
            )));
        }
        self.one_step(panel, plan.targets(), LagMode::Synthetic, mc)
    }

    fn forecast(
        &self,
        panel: &WeeklyPanel,
        adapter: &StateAdapter,
        targets: Range<usize>,
        mode: LagMode,
        mc: &McOptions,
    ) -> Result<ForecastResult> {
        mc.validate()?;
        let prep: Prepared = adapter.prepare(panel)?;
        let row = self.state_row(panel.state_id())?;
        let scaler = &adapter.pipeline.scaler;
        let windows: Vec<FeatureWindow> = targets
            .clone()
            .map(|s| prep.window(adapter.schema(), s - 1, mode, panel.state_id()))
            .collect::<Result<_>>()?;
        let (rows, dim) = (adapter.schema().window, adapter.schema().window_dim());
        let tail = (1.0 - mc.confidence) / 2.0;
        let mut points = Vec::with_capacity(windows.len());

        if mc.passes == 0 {
            let mut x = Vec::with_capacity(windows.len() * rows * dim);
            for w in &windows {
                x.extend_from_slice(&w.values);
            }
            let states = row.map(|r| vec![r; windows.len()]);
            let z = self.net.predict(&Tensor::new(vec![windows.len(), rows, dim], x)?, states.as_deref())?;
            for (s, z) in targets.clone().zip(z) {
                let m = scaler.invert_target(z)?.max(0.0);
                points.push(point(panel, s, m, 0.0, m, m));
            }
        } else {
            let t = mc.passes;
            for (s, w) in targets.clone().zip(&windows) {
                let mut x = Vec::with_capacity(t * rows * dim);
                for _ in 0..t {
                    x.extend_from_slice(&w.values);
                }
                let states = row.map(|r| vec![r; t]);
                let mut rng = ChaCha8Rng::seed_from_u64(pass_seed(mc.seed, s));
                let z = self.net.predict_stochastic(&Tensor::new(vec![t, rows, dim], x)?, states.as_deref(), &mut rng)?;
                let mut samples = z;
                samples.sort_by(|a, b| a.total_cmp(b));
                let (m, sd, lo, hi) = if samples[t - 1] > samples[0] {
                    (
                        mean(&samples),
                        population_std(&samples),
                        percentile_sorted(&samples, tail),
                        percentile_sorted(&samples, 1.0 - tail),
                    )
                } else {
                    (samples[0], 0.0, samples[0], samples[0])
                };
                let m = scaler.invert_target(m)?;
                let sd = scaler.invert_target_spread(sd)?;
                let (lo, hi) = (scaler.invert_target(lo)?, scaler.invert_target(hi)?);
                points.push(point(panel, s, m.max(0.0), sd, lo.max(0.0), hi.max(0.0)));
            }
        }
        Ok(ForecastResult { state_id: panel.state_id().to_string(), mode, mc: *mc, points })
    }
}

fn point(panel: &WeeklyPanel, s: usize, mean: f64, std: f64, lo: f64, hi: f64) -> ForecastPoint {
    ForecastPoint {
        index: s,
        epi_week: week_at(panel, s),
        mean,
        std,
        lo,
        hi,
        observed: panel.records().get(s).and_then(|r| r.incidence),
    }
}

/// Writes forecasts as CSV; an absent observation is an empty field.
pub fn write_forecast_csv<W: Write>(out: W, results: &[ForecastResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FORECAST_HEADER.split(','))?;
    for r in results {
        for p in &r.points {
            w.write_record([
                r.state_id.clone(),
                p.epi_week.year.to_string(),
                p.epi_week.week.to_string(),
                p.mean.to_string(),
                p.std.to_string(),
                p.lo.to_string(),
                p.hi.to_string(),
                p.observed.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
