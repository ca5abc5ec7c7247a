//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_params, loss_and_gradient, NetDims, NetworkParams, ARRAY_NAMES};
use crate::error::Result;
use crate::market::{Action, MarketState};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so entries that are zero
/// analytically are compared against finite-difference round-off on an
/// absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_array: &'static str,
    pub worst_offset: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let checked = self.checked + other.checked;
        let worst = if other.max_rel_error > self.max_rel_error { other } else { self };
        GradCheckReport { checked, ..worst }
    }
}

/// Compares every entry of the analytic gradient of
/// `(Q(state)[action] - target)^2` with a central difference of width `step`.
/// `corrupt` perturbs the analytic gradient before comparison (negative control).
pub fn check_q_gradient(
    params: &NetworkParams,
    state: &MarketState,
    action: Action,
    target: f64,
    step: f64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let dims = *params.dims();
    let (_, grads) = loss_and_gradient(params, state, action, target)?;
    let mut analytic = grads.flat();
    if corrupt {
        let i = analytic
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        analytic[i] = analytic[i] * 1.5 + 1e-3;
    }

    let base = params.flat();
    let mut probe = base.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_array: ARRAY_NAMES[0],
        worst_offset: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let bounds: Vec<usize> = dims
        .array_lens()
        .iter()
        .scan(0, |acc, n| {
            *acc += n;
            Some(*acc)
        })
        .collect();

    for (i, &a) in analytic.iter().enumerate() {
        probe[i] = base[i] + step;
        let plus = loss_and_gradient(&NetworkParams::from_flat(dims, &probe)?, state, action, target)?.0;
        probe[i] = base[i] - step;
        let minus = loss_and_gradient(&NetworkParams::from_flat(dims, &probe)?, state, action, target)?.0;
        probe[i] = base[i];
        let numeric = (plus - minus) / (2.0 * step);
        let rel = relative_error(a, numeric);
        report.checked += 1;
        if rel > report.max_rel_error || i == 0 {
            let arr = bounds.iter().position(|&b| i < b).unwrap_or(0);
            let start = if arr == 0 { 0 } else { bounds[arr - 1] };
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst_array = ARRAY_NAMES[arr];
            report.worst_offset = i - start;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

/// Runs `cases` random (params, state, action, target) draws for `dims`.
pub fn run_suite(dims: NetDims, seed: u64, cases: usize, corrupt: bool) -> Result<GradCheckReport> {
    dims.validate_q()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total: Option<GradCheckReport> = None;
    for _ in 0..cases.max(1) {
        let params = init_params(dims, rng.gen())?;
        let state = MarketState {
            diffs: (0..dims.horizon()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            prev_action: Action::ALL[rng.gen_range(0..3)],
        };
        let action = Action::ALL[rng.gen_range(0..3)];
        let target = rng.gen_range(-1.0..1.0);
        let r = check_q_gradient(&params, &state, action, target, DEFAULT_STEP, corrupt)?;
        total = Some(match total {
            None => r,
            Some(t) => t.merge(r),
        });
    }
    Ok(total.expect("at least one case"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let r = run_suite(NetDims::new(4, 3, 3), 1, 3, false).unwrap();
        assert!(r.passes(DEFAULT_TOLERANCE), "{r:?}");
        assert_eq!(r.checked, 3 * NetDims::new(4, 3, 3).num_params());
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let r = run_suite(NetDims::new(4, 3, 3), 1, 1, true).unwrap();
        assert!(!r.passes(DEFAULT_TOLERANCE), "{r:?}");
    }

    #[test]
    fn zero_tolerance_fails() {
        let r = run_suite(NetDims::new(3, 2, 2), 4, 1, false).unwrap();
        assert!(!r.passes(0.0));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }
}
