use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, percentile_sorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mse,
    Mare,
    R2,
}

impl MetricKind {
    pub fn lower_is_better(self) -> bool {
        !matches!(self, MetricKind::R2)
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Self::Mse),
            "mare" => Ok(Self::Mare),
            "r2" => Ok(Self::R2),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// `sign(d) * ln|d|`, defined as 0 at `d == 0`.
pub fn signed_log(d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        d.signum() * d.abs().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub metric: MetricKind,
    pub n_states: usize,
    pub iterations: usize,
    pub seed: u64,
    /// `mean(A) - mean(B)` per resample.
    pub deltas: Vec<f64>,
    pub mean_delta: f64,
    pub delta_ci: (f64, f64),
    pub mean_signed_log: f64,
    pub signed_log_ci: (f64, f64),
    /// Share of resamples in which A is better; ties count one half.
    pub win_probability: f64,
}

/// Paired bootstrap over states: each draw resamples state indices with
/// replacement and compares the mean score of A against B.
pub fn bootstrap_compare(
    a: &[f64],
    b: &[f64],
    metric: MetricKind,
    iterations: usize,
    confidence: f64,
    seed: u64,
) -> Result<BootstrapSummary> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} scores for A but {} for B", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("bootstrap needs at least two paired scores"));
    }
    if iterations == 0 {
        return Err(Error::invalid("bootstrap needs at least one iteration"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!("confidence {confidence} must lie in (0, 1)")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let n = a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deltas = Vec::with_capacity(iterations);
    let mut wins = 0.0;
    for _ in 0..iterations {
        let (mut sa, mut sb) = (0.0, 0.0);
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            sa += a[i];
            sb += b[i];
        }
        let d = sa / n as f64 - sb / n as f64;
        wins += if d == 0.0 {
            0.5
        } else if (d < 0.0) == metric.lower_is_better() {
            1.0
        } else {
            0.0
        };
        deltas.push(d);
    }
    let logs: Vec<f64> = deltas.iter().map(|d| signed_log(*d)).collect();
    let tail = (1.0 - confidence) / 2.0;
    let ci = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(|x, y| x.total_cmp(y));
        (percentile_sorted(&s, tail), percentile_sorted(&s, 1.0 - tail))
    };
    Ok(BootstrapSummary {
        metric,
        n_states: n,
        iterations,
        seed,
        mean_delta: mean(&deltas),
        delta_ci: ci(&deltas),
        mean_signed_log: mean(&logs),
        signed_log_ci: ci(&logs),
        win_probability: wins / iterations as f64,
        deltas,
    })
}
