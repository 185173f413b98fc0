//! Central finite-difference gradient checker.

/// Relative errors below this denominator are measured against it instead,
/// so coordinates whose true gradient is zero do not blow up the ratio.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic[i]` with `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for each
/// listed coordinate `i`. `f` must be deterministic.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], coords: &[usize], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    for &i in coords {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta);
        theta[i] = orig - h;
        let minus = f(&theta);
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_coordinate.is_none() {
            report.max_rel_error = err;
            report.worst_coordinate = Some(i);
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        // f(θ) = Σ c_i θ_i² + θ_0 θ_1, ∇ = 2 c_i θ_i + cross terms.
        let c = [0.5, 2.0, -1.5, 3.0];
        let theta = [0.3, -1.2, 2.5, 0.7];
        let f = |t: &[f64]| t.iter().zip(&c).map(|(x, c)| c * x * x).sum::<f64>() + t[0] * t[1];
        let mut grad: Vec<f64> = theta.iter().zip(&c).map(|(x, c)| 2.0 * c * x).collect();
        grad[0] += theta[1];
        grad[1] += theta[0];
        let r = finite_diff_check(f, &theta, &grad, &[0, 1, 2, 3], 1e-4);
        assert!(r.max_rel_error <= 1e-8, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |t: &[f64]| t[0] * t[0];
        let r = finite_diff_check(f, &[1.0], &[3.0], &[0], 1e-4);
        assert!(r.max_rel_error > 0.3);
        assert_eq!(r.worst_coordinate, Some(0));
    }
}
