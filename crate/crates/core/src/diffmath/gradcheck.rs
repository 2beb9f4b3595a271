//! Central finite differences over stored parameters, used as an independent
//! check on [`Graph::backward`](super::Graph::backward).

use super::{DiffError, Gradients, ParamId, ParamStore};

/// Numeric gradient of `f` with respect to every scalar of the parameters in `ids`.
pub fn central_difference(
    store: &ParamStore,
    ids: &[ParamId],
    step: f64,
    mut f: impl FnMut(&ParamStore) -> Result<f64, DiffError>,
) -> Result<Gradients, DiffError> {
    let mut work = store.clone();
    let mut out = Gradients::new();
    for &id in ids {
        let mut grad = work.get(id).clone();
        for i in 0..grad.len() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let plus = f(&work)?;
            work.get_mut(id).data_mut()[i] = orig - step;
            let minus = f(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.insert(id, grad);
    }
    Ok(out)
}

/// Largest elementwise `|a - n| / max(|a|, |n|, floor)` over the shared keys.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients, floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (id, n) in numeric {
        let Some(a) = analytic.get(id) else {
            worst = f64::INFINITY;
            continue;
        };
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(floor);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}
