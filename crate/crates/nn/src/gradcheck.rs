//! Finite-difference checks of analytic gradients using the fourth-order
//! central stencil `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`.

use crate::params::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: usize,
}

fn stencil(h: f64, mut at: impl FnMut(f64) -> f64) -> f64 {
    let near = at(h) - at(-h);
    let far = at(2.0 * h) - at(-2.0 * h);
    (8.0 * near - far) / (12.0 * h)
}

/// Relative error with an absolute floor so near-zero gradients don't blow up.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()).max(floor))
}

/// Compares `analytic` with central differences of `loss` at up to
/// `per_param` evenly spaced coordinates of every trainable entry.
pub fn check_params<F>(
    params: &ParamSet<f64>,
    analytic: &ParamSet<f64>,
    step: f64,
    per_param: usize,
    floor: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ParamSet<f64>) -> f64,
{
    let mut probe = params.clone();
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst_param: 0 };
    let mut flat = 0usize;
    let names: Vec<(String, usize, bool)> =
        params.iter().map(|p| (p.name.clone(), p.data.len(), p.trainable)).collect();
    for (name, len, trainable) in names {
        let grad = analytic.get(&name).expect("same names").to_vec();
        let stride = len.div_ceil(per_param.max(1)).max(1);
        let base = flat;
        flat += len;
        if !trainable {
            continue;
        }
        for i in (0..len).step_by(stride) {
            let idx = base + i;
            let orig = probe.get(&name).unwrap()[i];
            let numeric = stencil(step, |h| {
                probe.get_mut(&name).unwrap()[i] = orig + h;
                let v = loss(&probe);
                probe.get_mut(&name).unwrap()[i] = orig;
                v
            });
            let e = rel_err(grad[i], numeric, floor);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = idx;
            }
        }
    }
    report
}

/// Same as [`check_params`] for a plain input vector.
pub fn check_vector<F>(x: &[f64], analytic: &[f64], step: f64, floor: f64, mut loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let numeric = stencil(step, |h| {
            probe[i] = x[i] + h;
            let v = loss(&probe);
            probe[i] = x[i];
            v
        });
        worst = worst.max(rel_err(analytic[i], numeric, floor));
    }
    worst
}
