//! Central finite-difference checks against tape gradients.

use super::params::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients from
/// turning round-off into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `grads` with `(loss(θ + h) - loss(θ - h)) / 2h` at the given coordinates.
pub fn check_coordinates<F>(
    store: &mut ParamStore,
    grads: &Gradients,
    coords: &[(ParamId, usize)],
    step: f64,
    floor: f64,
    mut loss: F,
) -> Vec<GradCheckEntry>
where
    F: FnMut(&ParamStore) -> f64,
{
    coords
        .iter()
        .map(|&(id, k)| {
            let orig = store.get(id).data[k];
            store.get_mut(id).data[k] = orig + step;
            let plus = loss(store);
            store.get_mut(id).data[k] = orig - step;
            let minus = loss(store);
            store.get_mut(id).data[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.get(id)[k];
            GradCheckEntry {
                param: store.get(id).name.clone(),
                index: k,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric, floor),
            }
        })
        .collect()
}
