use super::NnError;

/// Relative error with a `max(1, |a|, |b|)` denominator.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares an analytic gradient against central differences of `f` at `point`.
///
/// Returns the maximum relative error over all coordinates.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, analytic: &[f64], point: &[f64], h: f64) -> Result<f64, NnError> {
    if analytic.len() != point.len() {
        return Err(NnError::ShapeMismatch { op: "grad_check", left: (analytic.len(), 1), right: (point.len(), 1) });
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NnError::NonFinite(i));
        }
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
