//! Desk-scale synthetic panels with known ground truth.
//!
//! Climate is a smooth seasonal cycle with slow inter-annual modulation plus
//! AR(1) weather noise. Incidence responds to cold minimum temperature
//! `climate_lag` weeks earlier through a softplus (monotone in cold), plus a
//! seasonal bump at the state's peak week, plus a persistent AR(1)
//! multiplicative anomaly scaled by `noise_level`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EpiWeek, WeeklyPanel, WeeklyRecord, WEEKS_PER_YEAR};

const HOLIDAY_WEEKS: [u32; 6] = [1, 21, 27, 36, 47, 52];
const BUMP_WIDTH_WEEKS: f64 = 4.0;
const ANOMALY_PERSISTENCE: f64 = 0.8;
const BURN_IN_WEEKS: usize = 52;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProfile {
    pub state_id: String,
    /// Seasonal incidence amplitude (cases/week above base).
    pub amplitude: f64,
    /// Week of year at which incidence peaks, 1..=52 (fractional allowed).
    pub peak_week: f64,
    pub base_level: f64,
    pub tmin_mean: f64,
    pub tmin_amplitude: f64,
    pub population: f64,
}

impl StateProfile {
    pub fn new(state_id: impl Into<String>) -> Self {
        Self {
            state_id: state_id.into(),
            amplitude: 200.0,
            peak_week: 5.0,
            base_level: 5.0,
            tmin_mean: 2.0,
            tmin_amplitude: 10.0,
            population: 5.0e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub states: Vec<StateProfile>,
    pub n_weeks: usize,
    pub start_year: i32,
    /// Weeks between a cold spell and the incidence response.
    pub climate_lag: usize,
    /// 0 gives deterministic incidence and climate given the seed.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticScenario {
    /// One state, six years of weekly data, noiseless.
    fn default() -> Self {
        Self {
            states: vec![StateProfile::new("S1")],
            n_weeks: 6 * WEEKS_PER_YEAR as usize,
            start_year: 2012,
            climate_lag: 3,
            noise_level: 0.0,
            seed: 42,
        }
    }
}

impl SyntheticScenario {
    /// A family of `n_states` climatically different states drawn from `seed`.
    pub fn family(n_states: usize, noise_level: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_fa31);
        let states = (0..n_states)
            .map(|i| StateProfile {
                state_id: format!("S{}", i + 1),
                amplitude: rng.gen_range(100.0..400.0),
                peak_week: rng.gen_range(1.0..10.0),
                base_level: rng.gen_range(2.0..10.0),
                tmin_mean: rng.gen_range(-4.0..10.0),
                tmin_amplitude: rng.gen_range(7.0..13.0),
                population: rng.gen_range(1.0e6..2.0e7f64).round(),
            })
            .collect();
        Self { states, noise_level, seed, ..Default::default() }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }
}

/// A generated panel together with the noise-free incidence it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: WeeklyPanel,
    pub truth: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(WEEKS_PER_YEAR as f64);
    d.min(WEEKS_PER_YEAR as f64 - d)
}

fn generate_state(scenario: &SyntheticScenario, index: usize) -> SyntheticPanel {
    let profile = &scenario.states[index];
    let mut rng = ChaCha8Rng::seed_from_u64(
        scenario.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1),
    );
    let noise = scenario.noise_level;
    let lag = scenario.climate_lag;
    let period = WEEKS_PER_YEAR as f64;

    // Slow inter-annual modulation, present even without noise.
    let phi_amp: f64 = rng.gen_range(0.0..2.0 * PI);
    let phi_shift: f64 = rng.gen_range(0.0..2.0 * PI);
    let phi_range: f64 = rng.gen_range(0.0..2.0 * PI);
    let phi_prcp: f64 = rng.gen_range(0.0..2.0 * PI);

    let cold_week = profile.peak_week - lag as f64;
    let lead = lag + BURN_IN_WEEKS;
    let total = scenario.n_weeks + lead;

    let mut tmin = Vec::with_capacity(total);
    let mut weather_anomaly = 0.0;
    let mut records = Vec::with_capacity(scenario.n_weeks);
    let mut climate = Vec::with_capacity(total);
    for k in 0..total {
        let t = k as f64 - lead as f64;
        let w = (k as i64 - lead as i64).rem_euclid(WEEKS_PER_YEAR as i64) as f64 + 1.0;
        let cycle = (2.0 * PI * (w - cold_week) / period).cos();
        let z: [f64; 5] = std::array::from_fn(|_| rng.sample(StandardNormal));
        weather_anomaly = 0.7 * weather_anomaly + (1.0f64 - 0.49).sqrt() * z[0];
        let modulation = 1.0 + 0.2 * (2.0 * PI * t / (period * 3.3) + phi_amp).sin();
        let lo = profile.tmin_mean - profile.tmin_amplitude * cycle * modulation
            + 1.5 * (2.0 * PI * t / (period * 2.1) + phi_shift).sin()
            + 3.0 * noise * weather_anomaly;
        let hi = lo + 9.0 + 2.0 * (2.0 * PI * w / period + phi_range).sin() + noise * z[1].abs();
        let prcp = (2.5
            + 1.2 * (2.0 * PI * (w - 10.0) / period).sin()
            + 0.5 * (2.0 * PI * t / (period * 2.7) + phi_prcp).sin()
            + noise * z[2])
            .max(0.0);
        let snow = if lo < 0.0 { 0.8 * (-lo) * prcp / 3.0 } else { 0.0 };
        let awnd = (4.0 + 1.2 * cycle + 0.5 * noise * z[3]).max(0.0);
        tmin.push(lo);
        climate.push((w as u32, lo, hi, prcp, snow, awnd, z[4]));
    }

    let cold_ref = softplus(profile.tmin_amplitude / 3.0);
    let mut anomaly = 0.0;
    let mut truth = Vec::with_capacity(scenario.n_weeks);
    for k in lag..total {
        let (w, lo, hi, prcp, snow, awnd, z) = climate[k];
        let driver = softplus((profile.tmin_mean - tmin[k - lag]) / 3.0) / cold_ref;
        let bump = (-(circular_distance(w as f64, profile.peak_week) / BUMP_WIDTH_WEEKS).powi(2) / 2.0).exp();
        let clean = profile.base_level + profile.amplitude * (0.6 * driver + 0.4 * bump);
        anomaly = ANOMALY_PERSISTENCE * anomaly
            + (1.0 - ANOMALY_PERSISTENCE * ANOMALY_PERSISTENCE).sqrt() * 0.5 * noise * z;
        if k < lead {
            continue;
        }
        let i = k - lead;
        let observed = (clean * anomaly.exp()).max(0.0);
        truth.push(clean.max(0.0));
        let year = scenario.start_year + (i / WEEKS_PER_YEAR as usize) as i32;
        records.push(WeeklyRecord {
            state_id: profile.state_id.clone(),
            epi_week: EpiWeek { year, week: w },
            incidence: Some(observed),
            tmin: lo,
            tmax: hi,
            tobs: 0.5 * (lo + hi),
            prcp,
            snow,
            snwd: 4.0 * snow,
            awnd,
            population: profile.population,
            holiday: HOLIDAY_WEEKS.contains(&w),
        });
    }
    let panel = WeeklyPanel::new(profile.state_id.clone(), records, "synthetic")
        .expect("generator produces aligned panels");
    SyntheticPanel { panel, truth }
}

pub fn generate_synthetic_with_truth(scenario: &SyntheticScenario) -> Vec<SyntheticPanel> {
    (0..scenario.states.len()).map(|i| generate_state(scenario, i)).collect()
}

pub fn generate_synthetic(scenario: &SyntheticScenario) -> Vec<WeeklyPanel> {
    generate_synthetic_with_truth(scenario)
        .into_iter()
        .map(|s| s.panel)
        .collect()
}
