use super::{NumericsError, Scalar};

/// Central-difference gradient: `(f(x + eps·eᵢ) − f(x − eps·eᵢ)) / (2·eps)`.
pub fn finite_diff_grad<T, F>(mut f: F, x: &[T], eps: T) -> Result<Vec<T>, NumericsError>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if !(eps > T::zero()) {
        return Err(NumericsError::NonPositiveScale(eps.to_f64().unwrap_or(f64::NAN)));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NumericsError::NonFiniteEvaluation { index: i });
        }
        grad.push((up - down) / (eps + eps));
    }
    Ok(grad)
}

/// Denominator floor for [`relative_error`]. Below it the comparison is
/// effectively absolute.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Largest elementwise [`relative_error`] between two gradient vectors.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(a.to_f64().unwrap(), n.to_f64().unwrap()))
        .fold(0.0, f64::max)
}
