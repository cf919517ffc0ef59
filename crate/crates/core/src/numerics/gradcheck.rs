use crate::error::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate at which the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Coordinates where both derivatives sat below the noise floor.
    pub floored: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Below this magnitude a central difference is rounding noise, not signal.
pub const NOISE_FLOOR: f64 = 1e-7;

/// Compares `grad` against central differences of `f` around `params`.
///
/// Error per coordinate is `|a − c| / (|a| + |c| + 1e−12)`; coordinates with
/// `|a| + |c| <` [`NOISE_FLOOR`] count as exact (piecewise-linear losses have
/// structural zero gradients whose finite differences are pure round-off).
pub fn grad_check<F>(f: F, params: &[f64], grad: &[f64], delta: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
{
    grad_check_with_floor(f, params, grad, delta, NOISE_FLOOR)
}

pub fn grad_check_with_floor<F>(
    f: F,
    params: &[f64],
    grad: &[f64],
    delta: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
{
    if params.len() != grad.len() {
        return Err(Error::Dimension(format!(
            "{} params but {} gradient entries",
            params.len(),
            grad.len()
        )));
    }
    let mut x = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        floored: 0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + delta;
        let plus = f(&x);
        x[i] = orig - delta;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * delta);
        let analytic = grad[i];
        if analytic.abs() + numeric.abs() < floor {
            report.floored += 1;
            continue;
        }
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12);
        if err > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic,
                numeric,
                floored: report.floored,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm_is_exact() {
        let x = [0.3, -1.7, 2.2, 0.01];
        let f = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        let r = grad_check(f, &x, &x, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = [0.3, -1.7, 2.2];
        let f = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        let wrong: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = grad_check(f, &x, &wrong, 1e-5).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn floor_only_hides_round_off() {
        let f = |p: &[f64]| p[0] * 1e-3;
        let strict = grad_check_with_floor(f, &[1.0], &[0.0], 1e-5, 0.0).unwrap();
        assert!(strict.max_rel_error > 0.5);
        // a genuine 1e-3 slope is far above the floor and is still caught
        let r = grad_check(f, &[1.0], &[0.0], 1e-5).unwrap();
        assert!(!r.passes(1e-4));
        let flat = |p: &[f64]| (p[0] * 3.0).sin() * 0.0 + 1.0;
        let r = grad_check(flat, &[0.7], &[0.0], 1e-5).unwrap();
        assert_eq!(r.floored, 1);
        assert!(r.passes(1e-4));
    }

    #[test]
    fn non_finite_objective_errors() {
        let f = |p: &[f64]| p[0].ln();
        assert!(grad_check(f, &[0.0], &[1.0], 1e-5).is_err());
    }
}
