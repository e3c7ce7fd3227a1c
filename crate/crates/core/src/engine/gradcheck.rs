//! Central finite-difference gradient checking.

/// Coordinates where `|analytic| + |numeric|` falls below this are skipped.
pub const SKIP_BELOW: f64 = 1e-8;

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / |numeric|` over the checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate that produced `max_rel_error`.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error used by the checker. A doubled gradient scores 1.0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(f64::MIN_POSITIVE)
}

/// Compares `analytic` against `(f(x + eps) - f(x - eps)) / 2 eps` on the
/// given coordinates of `params` (all of them when `coords` is `None`).
///
/// `f` must be deterministic; `params` is restored before returning.
pub fn grad_check<F>(
    mut f: F,
    params: &mut [f64],
    analytic: &[f64],
    eps: f64,
    coords: Option<&[usize]>,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
    };
    for &i in coords {
        let orig = params[i];
        params[i] = orig + eps;
        let plus = f(params);
        params[i] = orig - eps;
        let minus = f(params);
        params[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        if a.abs() + numeric.abs() < SKIP_BELOW {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let err = relative_error(a, numeric);
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(p: &[f64]) -> f64 {
        3.0 * p[0] - 2.0 * p[1] + 0.5 * p[2]
    }

    #[test]
    fn exact_for_linear_functions() {
        let mut p = vec![0.0; 3];
        let r = grad_check(linear, &mut p, &[3.0, -2.0, 0.5], 1e-6, None);
        assert!(r.max_rel_error < 1e-10, "{r:?}");
        assert_eq!(r.checked, 3);
        assert_eq!(p, vec![0.0; 3]);
    }

    #[test]
    fn flags_a_doubled_gradient() {
        let mut p = vec![0.3, -1.2, 4.0];
        let r = grad_check(linear, &mut p, &[6.0, -4.0, 1.0], 1e-6, None);
        assert!((r.max_rel_error - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn skips_flat_coordinates() {
        let mut p = vec![1.0, 2.0];
        let r = grad_check(|p| p[0] * 2.0, &mut p, &[2.0, 0.0], 1e-6, None);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
    }
}
