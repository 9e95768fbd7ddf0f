use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Denominator floor so gradients that are zero or nearly so compare on an
/// absolute scale, above the round-off of a central difference.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central finite differences `(f(θ+h) − f(θ−h)) / 2h` for every scalar of
/// every parameter, compared with `analytic` (aligned with the store; `None`
/// means an all-zero gradient).
pub fn grad_check<F>(mut f: F, params: &ParamStore, analytic: &[Option<Tensor>], h: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    assert_eq!(analytic.len(), params.len());
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance: tol,
    };
    for id in params.ids() {
        for j in 0..params.get(id).len() {
            let numeric = central_difference(&mut f, &mut probe, id, j, h);
            let a = analytic[id.0].as_ref().map_or(0.0, |t| t.data()[j]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), j));
            }
        }
    }
    report
}

fn central_difference<F>(f: &mut F, probe: &mut ParamStore, id: ParamId, j: usize, h: f64) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let orig = probe.get(id).data()[j];
    probe.get_mut(id).data_mut()[j] = orig + h;
    let up = f(probe);
    probe.get_mut(id).data_mut()[j] = orig - h;
    let down = f(probe);
    probe.get_mut(id).data_mut()[j] = orig;
    (up - down) / (2.0 * h)
}
