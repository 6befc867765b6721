//! Trial probability functions.

use crate::error::{Error, Result};

/// Probability that a server at utilization `x` accepts a new service.
///
/// `f(x) = x^p (T - x) / M_p` on `[0, T]`, zero elsewhere, where
/// `M_p = p^p / (p+1)^(p+1) * T^(p+1)` scales the peak at `x = pT/(p+1)` to 1.
pub fn assignment_probability(x: f64, shape: f64, threshold: f64) -> f64 {
    if !(x > 0.0 && x < threshold) {
        return 0.0;
    }
    let m_p = shape.powf(shape) / (shape + 1.0).powf(shape + 1.0) * threshold.powf(shape + 1.0);
    (x.powf(shape) * (threshold - x) / m_p).clamp(0.0, 1.0)
}

/// Utilization at which [`assignment_probability`] peaks.
pub fn assignment_peak(shape: f64, threshold: f64) -> f64 {
    shape * threshold / (shape + 1.0)
}

/// Probability that an over-utilized server migrates services away:
/// `(1 + (x - 1) / (1 - T_h))^beta`, 0 below `T_h` and 1 above full load.
pub fn high_migration_probability(x: f64, threshold: f64, shape: f64) -> Result<f64> {
    if !(threshold < 1.0) {
        return Err(Error::config(format!(
            "migration threshold must be below 1, got {threshold}"
        )));
    }
    if x <= threshold {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let base = 1.0 + (x - 1.0) / (1.0 - threshold);
    Ok(base.max(0.0).powf(shape).clamp(0.0, 1.0))
}
