//! Central finite differences for gradient verification.

use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `theta`.
///
/// Each coordinate is perturbed by `±h` in turn; a non-finite function value
/// is reported with the coordinate that produced it.
pub fn finite_diff_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step size h={h} must be positive")));
    }
    let mut work = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        work[i] = theta[i] + h;
        let fp = f(&work)?;
        work[i] = theta[i] - h;
        let fm = f(&work)?;
        work[i] = theta[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference at coordinate {i}: f(+h)={fp}, f(-h)={fm}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Worst relative error between two gradient vectors.
///
/// The denominator is floored at 1e-3 so that coordinates where both
/// gradients are tiny compare absolutely instead of amplifying noise.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_analytic() {
        // f(x) = sum x_i^2 has gradient 2x; central differences are exact
        // for quadratics up to rounding.
        let theta = [0.3, -1.2, 2.0];
        let g = finite_diff_gradient(|x| Ok(x.iter().map(|v| v * v).sum()), &theta, 1e-5).unwrap();
        for (gi, ti) in g.iter().zip(&theta) {
            assert!((gi - 2.0 * ti).abs() < 1e-9, "got {gi} want {}", 2.0 * ti);
        }
    }

    #[test]
    fn non_finite_evaluation_names_the_coordinate() {
        // perturbing coordinate 1 downward crosses zero and ln goes NaN;
        // coordinate 0 stays finite throughout
        let theta = [1.0, 0.05];
        let err = finite_diff_gradient(|x| Ok(x[1].ln()), &theta, 0.1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("coordinate 1"), "unexpected message: {msg}");
    }

    #[test]
    fn relative_error_floors_small_denominators() {
        // both gradients ~1e-9: difference is measured against the 1e-3 floor
        let e = max_relative_error(&[1e-9], &[2e-9]);
        assert!(e < 1e-5, "floored comparison should be tiny, got {e}");
    }
}
