use rand::seq::index::sample;

use crate::rng::rng_from;
use crate::scalar::Scalar;

use super::params::{ParamGrads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Number of coordinates probed (all of them if the store is smaller).
    pub coords: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tol: 1e-4, coords: 64, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: Vec<CoordCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checked.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares the analytic gradient returned by `f` with central finite
/// differences on a random subset of coordinates.
///
/// `f` returns `(value, gradient)` at the given parameters; the gradient is
/// only read at the unperturbed point.
pub fn grad_check<T, F>(store: &ParamStore<T>, mut f: F, config: &GradCheckConfig) -> GradCheckReport
where
    T: Scalar,
    F: FnMut(&ParamStore<T>) -> (T, ParamGrads<T>),
{
    let (_, analytic) = f(store);
    let total = store.num_values();
    let n = config.coords.min(total);
    let mut rng = rng_from(config.seed);
    let mut coords: Vec<usize> = sample(&mut rng, total, n).into_vec();
    coords.sort_unstable();

    let h = T::of(config.step);
    let mut probe = store.clone();
    let mut checked = Vec::with_capacity(n);
    for flat in coords {
        let (id, i) = store.coord(flat);
        let x0 = store.get(id).values[i];
        probe.get_mut(id).values[i] = x0 + h;
        let plus = f(&probe).0;
        probe.get_mut(id).values[i] = x0 - h;
        let minus = f(&probe).0;
        probe.get_mut(id).values[i] = x0;
        let numeric = ((plus - minus) / (h + h)).as_f64();
        let a = analytic.get(id)[i].as_f64();
        let denom = a.abs().max(numeric.abs()).max(config.floor);
        let rel_error = if (a - numeric).abs() == 0.0 { 0.0 } else { (a - numeric).abs() / denom };
        checked.push(CoordCheck { param: store.get(id).name.clone(), index: i, analytic: a, numeric, rel_error });
    }
    let max_rel_error = checked.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let passed = checked.iter().all(|c| c.rel_error.is_finite()) && max_rel_error <= config.tol;
    GradCheckReport { checked, max_rel_error, tol: config.tol, passed }
}
