//! Angles as (sin, cos) pairs and wrap-around error metrics, in degrees.

use crate::error::{Error, Result};

pub fn encode(deg: f64) -> (f64, f64) {
    deg.to_radians().sin_cos()
}

/// Angle in [0, 360) of a (sin, cos) pair.
pub fn decode(s: f64, c: f64) -> Result<f64> {
    if s == 0.0 && c == 0.0 || !s.is_finite() || !c.is_finite() {
        return Err(Error::UndefinedAngle);
    }
    let d = s.atan2(c).to_degrees().rem_euclid(360.0);
    // rem_euclid can round up to exactly 360
    Ok(if d >= 360.0 { 0.0 } else { d })
}

/// Smallest absolute difference on the circle, in [0, 180].
pub fn circular_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn circular_rmse(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    (pred.iter().zip(truth).map(|(p, t)| circular_error(*p, *t).powi(2)).sum::<f64>() / pred.len() as f64)
        .sqrt()
}

pub fn circular_mae(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).map(|(p, t)| circular_error(*p, *t)).sum::<f64>() / pred.len() as f64
}
