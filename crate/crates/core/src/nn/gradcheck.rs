//! Central finite-difference checks of analytic gradients.

use super::params::{Grads, ParamId, Params};

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compares `grads` against central differences of `loss` at each probe
/// coordinate. `loss` must be a pure function of the parameters.
pub fn check_gradients(
    params: &Params,
    grads: &Grads,
    probes: &[(ParamId, usize)],
    step: f64,
    loss: impl Fn(&Params) -> f64,
) -> Vec<ProbeResult> {
    let mut work = params.clone();
    probes
        .iter()
        .map(|&(id, index)| {
            let orig = work.get(id).data[index];
            work.get_mut(id).data[index] = orig + step;
            let up = loss(&work);
            work.get_mut(id).data[index] = orig - step;
            let down = loss(&work);
            work.get_mut(id).data[index] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.get(id).data[index];
            ProbeResult {
                param: id,
                index,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric, 1e-7),
            }
        })
        .collect()
}

/// Every coordinate of every parameter.
pub fn all_coordinates(params: &Params) -> Vec<(ParamId, usize)> {
    params
        .entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.tensor.len()).map(move |j| (ParamId(i), j)))
        .collect()
}

/// `n` coordinates spread evenly over the flattened parameter vector.
pub fn spread_coordinates(params: &Params, n: usize) -> Vec<(ParamId, usize)> {
    let all = all_coordinates(params);
    if all.len() <= n {
        return all;
    }
    (0..n).map(|i| all[i * all.len() / n]).collect()
}

pub fn max_rel_error(results: &[ProbeResult]) -> f64 {
    results.iter().map(|r| r.rel_error).fold(0.0, f64::max)
}
