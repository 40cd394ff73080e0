//! Weekly per-state panels of incidence and climate covariates.
//!
//! A [`WeeklyPanel`] is the universal dataset object: one state, one record
//! per epidemiological week, gap-free after alignment. Panels are immutable
//! once built; everything downstream reads them by index.

mod io;
mod split;
mod synthetic;

pub use io::{load_panel, load_panels, write_panel, write_panels, CSV_HEADER};
pub(crate) use split::holdout_split;
pub use split::{temporal_split, TemporalSplit, MIN_SEGMENT_WEEKS};
pub use synthetic::{
    generate_synthetic, generate_synthetic_with_truth, StateProfile, SyntheticPanel,
    SyntheticScenario,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weeks per epidemiological year. Week 53 is folded into week 52 on load.
pub const WEEKS_PER_YEAR: u32 = 52;

/// Minimum panel length: a 16-week window plus one target week.
pub const MIN_PANEL_WEEKS: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpiWeek {
    pub year: i32,
    pub week: u32,
}

impl EpiWeek {
    pub fn new(year: i32, week: u32) -> Result<Self> {
        if !(1..=WEEKS_PER_YEAR).contains(&week) {
            return Err(Error::invalid(format!("week {week} outside 1..=52")));
        }
        Ok(Self { year, week })
    }

    pub fn next(self) -> Self {
        if self.week == WEEKS_PER_YEAR {
            Self { year: self.year + 1, week: 1 }
        } else {
            Self { year: self.year, week: self.week + 1 }
        }
    }

    /// Continuous week counter, used for gap detection.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * WEEKS_PER_YEAR as i64 + (self.week as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let year = ordinal.div_euclid(WEEKS_PER_YEAR as i64) as i32;
        let week = ordinal.rem_euclid(WEEKS_PER_YEAR as i64) as u32 + 1;
        Self { year, week }
    }
}

impl std::fmt::Display for EpiWeek {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

/// One aligned week of observations for a state.
///
/// Climate fields are always filled after alignment. Incidence may be absent
/// for weeks where only covariates are known (e.g. a forecast horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRecord {
    pub state_id: String,
    pub epi_week: EpiWeek,
    pub incidence: Option<f64>,
    pub tmin: f64,
    pub tmax: f64,
    pub tobs: f64,
    pub prcp: f64,
    pub snow: f64,
    pub snwd: f64,
    pub awnd: f64,
    pub population: f64,
    pub holiday: bool,
}

/// Climate/covariate columns addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Tmin,
    Tmax,
    Tobs,
    Prcp,
    Snow,
    Snwd,
    Awnd,
    Population,
    Holiday,
}

impl Variable {
    pub const CLIMATE: [Variable; 7] = [
        Variable::Tmin,
        Variable::Tmax,
        Variable::Tobs,
        Variable::Prcp,
        Variable::Snow,
        Variable::Snwd,
        Variable::Awnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Tmin => "tmin",
            Variable::Tmax => "tmax",
            Variable::Tobs => "tobs",
            Variable::Prcp => "prcp",
            Variable::Snow => "snow",
            Variable::Snwd => "snwd",
            Variable::Awnd => "awnd",
            Variable::Population => "population",
            Variable::Holiday => "holiday",
        }
    }
}

impl WeeklyRecord {
    pub fn get(&self, var: Variable) -> f64 {
        match var {
            Variable::Tmin => self.tmin,
            Variable::Tmax => self.tmax,
            Variable::Tobs => self.tobs,
            Variable::Prcp => self.prcp,
            Variable::Snow => self.snow,
            Variable::Snwd => self.snwd,
            Variable::Awnd => self.awnd,
            Variable::Population => self.population,
            Variable::Holiday => {
                if self.holiday {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMetadata {
    pub first_week: EpiWeek,
    pub last_week: EpiWeek,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyPanel {
    state_id: String,
    records: Vec<WeeklyRecord>,
    metadata: PanelMetadata,
}

impl WeeklyPanel {
    /// Builds a panel from already aligned records.
    ///
    /// Records must be consecutive weeks of one state, with valid incidence
    /// and temperature ordering.
    pub fn new(
        state_id: impl Into<String>,
        records: Vec<WeeklyRecord>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let state_id = state_id.into();
        let mut missing = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            if rec.state_id != state_id {
                return Err(Error::invalid(format!(
                    "record {i} belongs to {} not {state_id}",
                    rec.state_id
                )));
            }
            if !(1..=WEEKS_PER_YEAR).contains(&rec.epi_week.week) {
                return Err(Error::invalid(format!("record {i}: week {}", rec.epi_week.week)));
            }
            if let Some(y) = rec.incidence {
                if !(y >= 0.0) || !y.is_finite() {
                    return Err(Error::invalid(format!("record {i}: incidence {y}")));
                }
            }
            if rec.tmax < rec.tmin {
                return Err(Error::invalid(format!(
                    "record {i}: tmax {} < tmin {}",
                    rec.tmax, rec.tmin
                )));
            }
            if i > 0 {
                let prev = records[i - 1].epi_week.ordinal();
                let cur = rec.epi_week.ordinal();
                if cur <= prev {
                    return Err(Error::invalid(format!(
                        "weeks not strictly increasing at record {i} ({})",
                        rec.epi_week
                    )));
                }
                for o in prev + 1..cur {
                    missing.push(EpiWeek::from_ordinal(o));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Alignment {
                state: state_id,
                missing: missing.into_iter().map(|w| (w.year, w.week)).collect(),
            });
        }
        if records.len() < MIN_PANEL_WEEKS {
            return Err(Error::invalid(format!(
                "panel for {state_id} has {} weeks, need at least {MIN_PANEL_WEEKS}",
                records.len()
            )));
        }
        let metadata = PanelMetadata {
            first_week: records[0].epi_week,
            last_week: records[records.len() - 1].epi_week,
            source: source.into(),
        };
        Ok(Self { state_id, records, metadata })
    }

    pub fn state_id(&self) -> &str {
        &self.state_id
    }

    pub fn records(&self) -> &[WeeklyRecord] {
        &self.records
    }

    pub fn metadata(&self) -> &PanelMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn week(&self, index: usize) -> EpiWeek {
        self.records[index].epi_week
    }

    pub fn column(&self, var: Variable) -> Vec<f64> {
        self.records.iter().map(|r| r.get(var)).collect()
    }

    pub fn incidence(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.incidence).collect()
    }

    /// Observed incidence over `range`; errors on the first missing week.
    pub fn observed(&self, range: std::ops::Range<usize>) -> Result<Vec<f64>> {
        range
            .map(|i| {
                self.records
                    .get(i)
                    .and_then(|r| r.incidence)
                    .ok_or_else(|| {
                        Error::Missing(format!(
                            "incidence for {} at index {i}",
                            self.state_id
                        ))
                    })
            })
            .collect()
    }

    /// Copy with every incidence value at index `>= from` replaced by `value`.
    ///
    /// Used by leakage harnesses: a label-free forecaster must not notice.
    pub fn with_poisoned_incidence(&self, from: usize, value: f64) -> Self {
        let mut out = self.clone();
        for rec in out.records.iter_mut().skip(from) {
            rec.incidence = Some(value);
        }
        out
    }

    /// Copy restricted to the first `len` weeks.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        Self::new(
            self.state_id.clone(),
            self.records[..len.min(self.records.len())].to_vec(),
            self.metadata.source.clone(),
        )
    }
}
