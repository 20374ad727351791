//! Central finite-difference verification of analytic gradients.

use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (parameter index, flat entry index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
    pub passed: bool,
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compares `analytic` against `(L(p+h) − L(p−h)) / 2h` entry by entry.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[Tensor2],
    analytic: &[Tensor2],
    h: f64,
    tolerance: f64,
) -> Result<GradCheck>
where
    F: FnMut(&[Tensor2]) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::contract("finite_diff_check", format!("step {h} must be positive")));
    }
    if params.len() != analytic.len() || params.iter().zip(analytic).any(|(p, a)| !p.same_shape(a)) {
        return Err(Error::dim("finite_diff_check", "one gradient per parameter", "mismatched list"));
    }
    let mut work = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
        passed: true,
    };
    for pi in 0..work.len() {
        for ei in 0..work[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let plus = loss_fn(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let minus = loss_fn(&work)?;
            work[pi].data_mut()[ei] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite("finite_diff_check loss"));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[ei];
            let err = relative_error(a, numeric);
            report.entries += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact_to_second_order() {
        let p = [Tensor2::scalar_tensor(3.0)];
        let g = [Tensor2::scalar_tensor(6.0)];
        let r = finite_diff_check(|p| Ok(p[0].scalar().powi(2)), &p, &g, 1e-5, 1e-9).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert!(r.passed);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = [Tensor2::row_vector(&[1.0, 2.0]).unwrap()];
        let g = [Tensor2::zeros(1, 2)];
        let r = finite_diff_check(|_| Ok(4.2), &p, &g, 1e-5, 1e-12).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.numeric, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let p = [Tensor2::scalar_tensor(1.0)];
        let g = [Tensor2::scalar_tensor(3.0)];
        let r = finite_diff_check(|p| Ok(p[0].scalar().powi(2)), &p, &g, 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_loss_errors() {
        let p = [Tensor2::scalar_tensor(0.0)];
        let g = [Tensor2::scalar_tensor(0.0)];
        assert!(matches!(
            finite_diff_check(|p| Ok(p[0].scalar().ln()), &p, &g, 1e-5, 1e-4),
            Err(Error::NonFinite(_))
        ));
    }
}
