//! Central finite differences, the shared numerical-gradient engine.

use crate::error::{Error, Result};

/// Central-difference gradient of `objective` at `x` with the given step.
///
/// Per coordinate: (f(x + h e_k) − f(x − h e_k)) / (2h), error O(h²) on
/// smooth regions. A non-finite objective value is propagated as an error
/// naming the offending coordinate.
pub fn finite_diff_gradient<F>(objective: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + step;
        let plus = objective(&probe)?;
        probe[k] = x[k] - step;
        let minus = objective(&probe)?;
        probe[k] = x[k];
        if !plus.is_finite() {
            return Err(Error::NonFiniteObjective {
                coordinate: k,
                value: plus,
            });
        }
        if !minus.is_finite() {
            return Err(Error::NonFiniteObjective {
                coordinate: k,
                value: minus,
            });
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}
