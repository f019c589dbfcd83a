use crate::error::{Error, Result};

/// Central-difference estimate of the gradient of `f` at `theta0`.
///
/// Test oracle only; the trainers never call this.
pub fn finite_diff_gradient<F>(mut f: F, theta0: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut theta = theta0.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let plus = f(&theta)?;
        theta[i] = orig - step;
        let minus = f(&theta)?;
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Evaluation { index: i });
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}
