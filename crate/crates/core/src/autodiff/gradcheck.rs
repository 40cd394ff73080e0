//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients of the scalar built by `build` against
/// central differences with step `eps`.
///
/// At most `max_coords` coordinates per parameter are probed, chosen at
/// random when the tensor is larger. `build` must be deterministic.
pub fn check_gradients<F, R>(
    store: &mut ParamStore,
    ids: &[ParamId],
    max_coords: usize,
    eps: f64,
    rng: &mut R,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<'_>) -> Result<Var>,
    R: Rng + ?Sized,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        Ok(g.value(loss).data()[0])
    };
    let mut worst = 0.0f64;
    let mut count = 0;
    for &id in ids {
        let len = store.get(id).len();
        let coords: Vec<usize> = if len <= max_coords { (0..len).collect() } else { sample(rng, len, max_coords).into_vec() };
        for k in coords {
            let a = analytic.param(id).map_or(0.0, |t| t.data()[k]);
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + eps;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - eps;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let n = (up - down) / (2.0 * eps);
            if !n.is_finite() || !a.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for `{}`[{k}]", store.name(id))));
            }
            worst = worst.max(relative_error(a, n));
            count += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error: worst, coordinates: count })
}
