use super::ForecastError;
use crate::scalar::Scalar;

/// Pearson correlation coefficient between two equal-length series.
///
/// Returns an error when the series differ in length, hold fewer than two
/// points, or either side has zero variance (the coefficient is undefined
/// there, not zero). The result is clamped to [-1, 1] to absorb rounding.
pub fn pearson<S: Scalar>(x: &[S], y: &[S]) -> Result<f64, ForecastError> {
    if x.len() != y.len() {
        return Err(ForecastError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(ForecastError::TooFewPoints {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mean_x = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mean_y = y.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a.as_f64() - mean_x;
        let dy = b.as_f64() - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(ForecastError::ZeroVariance { name: "x".into() });
    }
    if syy == 0.0 {
        return Err(ForecastError::ZeroVariance { name: "y".into() });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
