use std::collections::BTreeMap;
use std::path::Path;

use super::{EpiWeek, WeeklyPanel, WeeklyRecord, WEEKS_PER_YEAR};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 13] = [
    "state",
    "year",
    "week",
    "incidence",
    "tmin",
    "tmax",
    "tobs",
    "prcp",
    "snow",
    "snwd",
    "awnd",
    "population",
    "holiday",
];

// Numeric columns after (state, year, week), in header order.
const N_VALUES: usize = 10;
const INCIDENCE: usize = 0;
const TMIN: usize = 1;
const TMAX: usize = 2;
const POPULATION: usize = 8;
const HOLIDAY: usize = 9;

#[derive(Debug, Clone)]
struct RawRow {
    state: String,
    year: i32,
    week: u32,
    values: [Option<f64>; N_VALUES],
}

fn parse_rows(path: &Path) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut columns = [0usize; 13];
    for (slot, name) in columns.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                row: 1,
                column: name.to_string(),
                message: "missing header column".into(),
            })?;
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // Header is line 1.
        let row = i + 2;
        let field = |c: usize| record.get(columns[c]).unwrap_or("");
        let parse_err = |c: usize, message: String| Error::Parse {
            row,
            column: CSV_HEADER[c].to_string(),
            message,
        };

        let state = field(0).to_string();
        if state.is_empty() {
            return Err(parse_err(0, "empty state id".into()));
        }
        let year: i32 = field(1)
            .parse()
            .map_err(|e| parse_err(1, format!("`{}`: {e}", field(1))))?;
        let week: u32 = field(2)
            .parse()
            .map_err(|e| parse_err(2, format!("`{}`: {e}", field(2))))?;
        if !(1..=WEEKS_PER_YEAR + 1).contains(&week) {
            return Err(parse_err(2, format!("week {week} outside 1..=53")));
        }

        let mut values = [None; N_VALUES];
        for (k, value) in values.iter_mut().enumerate() {
            let text = field(k + 3);
            if text.is_empty() {
                continue;
            }
            let v: f64 = text
                .parse()
                .map_err(|e| parse_err(k + 3, format!("`{text}`: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(k + 3, format!("non-finite value `{text}`")));
            }
            *value = Some(v);
        }
        if let Some(y) = values[INCIDENCE] {
            if y < 0.0 {
                return Err(parse_err(3, format!("negative incidence {y}")));
            }
        }
        if let (Some(lo), Some(hi)) = (values[TMIN], values[TMAX]) {
            if hi < lo {
                return Err(parse_err(3 + TMAX, format!("tmax {hi} < tmin {lo}")));
            }
        }
        if let Some(h) = values[HOLIDAY] {
            if h != 0.0 && h != 1.0 {
                return Err(parse_err(3 + HOLIDAY, format!("holiday must be 0 or 1, got {h}")));
            }
        }
        rows.push(RawRow { state, year, week, values });
    }
    Ok(rows)
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Averages all rows sharing one (year, week): daily rows or per-station rows.
fn aggregate_week(rows: &[&RawRow]) -> [Option<f64>; N_VALUES] {
    let mut out = [None; N_VALUES];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = mean_present(rows.iter().map(|r| r.values[k]));
    }
    if let Some(h) = out[HOLIDAY] {
        out[HOLIDAY] = Some(if h > 0.0 { 1.0 } else { 0.0 });
    }
    out
}

/// Folds week 53 into week 52: incidence counts add, covariates average.
fn merge_week53(w52: Option<[Option<f64>; N_VALUES]>, w53: [Option<f64>; N_VALUES]) -> [Option<f64>; N_VALUES] {
    let Some(w52) = w52 else { return w53 };
    let mut out = [None; N_VALUES];
    for k in 0..N_VALUES {
        out[k] = match k {
            INCIDENCE => match (w52[k], w53[k]) {
                (Some(a), Some(b)) => Some(a + b),
                (a, b) => a.or(b),
            },
            HOLIDAY => match (w52[k], w53[k]) {
                (None, None) => None,
                (a, b) => Some(a.unwrap_or(0.0).max(b.unwrap_or(0.0))),
            },
            _ => mean_present([w52[k], w53[k]].into_iter()),
        };
    }
    out
}

fn fill_column(state: &str, name: &str, column: &mut [Option<f64>]) -> Result<Vec<f64>> {
    let first = column
        .iter()
        .flatten()
        .next()
        .copied()
        .ok_or_else(|| Error::Missing(format!("column `{name}` is empty for state {state}")))?;
    let mut last = first;
    Ok(column
        .iter()
        .map(|v| {
            if let Some(v) = v {
                last = *v;
            }
            last
        })
        .collect())
}

fn build_panel(state: &str, rows: &[&RawRow], source: &str) -> Result<WeeklyPanel> {
    let mut weeks: BTreeMap<(i32, u32), Vec<&RawRow>> = BTreeMap::new();
    for row in rows {
        weeks.entry((row.year, row.week)).or_default().push(row);
    }
    let mut aligned: BTreeMap<(i32, u32), [Option<f64>; N_VALUES]> = BTreeMap::new();
    let mut extra = Vec::new();
    for ((year, week), group) in &weeks {
        let values = aggregate_week(group);
        if *week == WEEKS_PER_YEAR + 1 {
            extra.push((*year, values));
        } else {
            aligned.insert((*year, *week), values);
        }
    }
    for (year, values) in extra {
        let w52 = aligned.remove(&(year, WEEKS_PER_YEAR));
        aligned.insert((year, WEEKS_PER_YEAR), merge_week53(w52, values));
    }

    let keys: Vec<(i32, u32)> = aligned.keys().copied().collect();
    let mut columns: Vec<Vec<Option<f64>>> = (0..N_VALUES)
        .map(|k| aligned.values().map(|v| v[k]).collect())
        .collect();
    let mut filled: Vec<Vec<f64>> = Vec::with_capacity(N_VALUES);
    for (k, column) in columns.iter_mut().enumerate() {
        if k == INCIDENCE {
            filled.push(Vec::new());
        } else if k == HOLIDAY {
            filled.push(column.iter().map(|v| v.unwrap_or(0.0)).collect());
        } else {
            filled.push(fill_column(state, CSV_HEADER[k + 3], column)?);
        }
    }

    let records = keys
        .iter()
        .enumerate()
        .map(|(i, &(year, week))| WeeklyRecord {
            state_id: state.to_string(),
            epi_week: EpiWeek { year, week },
            incidence: columns[INCIDENCE][i],
            tmin: filled[1][i],
            tmax: filled[2][i],
            tobs: filled[3][i],
            prcp: filled[4][i],
            snow: filled[5][i],
            snwd: filled[6][i],
            awnd: filled[7][i],
            population: filled[POPULATION][i],
            holiday: filled[HOLIDAY][i] > 0.0,
        })
        .collect();
    WeeklyPanel::new(state, records, source)
}

/// Loads and aligns one state's weekly panel from a CSV file.
///
/// Multiple rows for the same week (daily or per-station rows) are averaged
/// per variable. Missing covariates are forward-filled, then back-filled at
/// the series start.
pub fn load_panel(path: impl AsRef<Path>, state_id: &str) -> Result<WeeklyPanel> {
    let path = path.as_ref();
    let rows = parse_rows(path)?;
    let own: Vec<&RawRow> = rows.iter().filter(|r| r.state == state_id).collect();
    if own.is_empty() {
        return Err(Error::UnknownState(state_id.to_string()));
    }
    build_panel(state_id, &own, &path.display().to_string())
}

/// Loads every state in the file, in order of first appearance.
pub fn load_panels(path: impl AsRef<Path>) -> Result<Vec<WeeklyPanel>> {
    let path = path.as_ref();
    let rows = parse_rows(path)?;
    let mut order: Vec<&str> = Vec::new();
    for r in &rows {
        if !order.contains(&r.state.as_str()) {
            order.push(&r.state);
        }
    }
    order
        .into_iter()
        .map(|state| {
            let own: Vec<&RawRow> = rows.iter().filter(|r| r.state == state).collect();
            build_panel(state, &own, &path.display().to_string())
        })
        .collect()
}

fn write_records<W: std::io::Write>(writer: &mut csv::Writer<W>, panel: &WeeklyPanel) -> Result<()> {
    for r in panel.records() {
        writer.write_record([
            r.state_id.clone(),
            r.epi_week.year.to_string(),
            r.epi_week.week.to_string(),
            r.incidence.map(|v| v.to_string()).unwrap_or_default(),
            r.tmin.to_string(),
            r.tmax.to_string(),
            r.tobs.to_string(),
            r.prcp.to_string(),
            r.snow.to_string(),
            r.snwd.to_string(),
            r.awnd.to_string(),
            r.population.to_string(),
            (r.holiday as u8).to_string(),
        ])?;
    }
    Ok(())
}

pub fn write_panels(path: impl AsRef<Path>, panels: &[WeeklyPanel]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(CSV_HEADER)?;
    for panel in panels {
        write_records(&mut writer, panel)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_panel(path: impl AsRef<Path>, panel: &WeeklyPanel) -> Result<()> {
    write_panels(path, std::slice::from_ref(panel))
}
