//! Integer time-grid arithmetic.
//!
//! All times in the pipeline are multiples of some base step (the fine
//! sampling interval, or the macroscopic step tau). Configuration carries
//! physical times; these helpers convert them to step counts and reject
//! values that do not sit on the grid, so no floating-point drift can
//! accumulate in index arithmetic.

use crate::{CgError, Result};

/// Relative tolerance for deciding that a time is a multiple of a step.
const GRID_RTOL: f64 = 1e-9;

/// Number of `step`s in `time`, or an error if `time` is not a nonnegative
/// integer multiple of `step`.
pub fn steps_of(time: f64, step: f64, what: &str) -> Result<u64> {
    if step <= 0.0 || !step.is_finite() {
        return Err(CgError::Config(format!(
            "{what}: step must be positive and finite, got {step}"
        )));
    }
    if !time.is_finite() || time < 0.0 {
        return Err(CgError::Config(format!(
            "{what}: time must be nonnegative and finite, got {time}"
        )));
    }
    let ratio = time / step;
    let k = ratio.round();
    let tol = GRID_RTOL * ratio.abs().max(1.0);
    if (ratio - k).abs() > tol {
        return Err(CgError::Config(format!(
            "{what}: {time} is not an integer multiple of {step}"
        )));
    }
    Ok(k as u64)
}

/// Like [`steps_of`] but additionally requires at least one step.
pub fn positive_steps_of(time: f64, step: f64, what: &str) -> Result<u64> {
    let k = steps_of(time, step, what)?;
    if k == 0 {
        return Err(CgError::Config(format!(
            "{what}: {time} must be at least one step of {step}"
        )));
    }
    Ok(k)
}

/// True when two grid steps agree to within relative tolerance.
pub fn same_step(a: f64, b: f64) -> bool {
    (a - b).abs() <= GRID_RTOL * a.abs().max(b.abs()).max(1.0)
}
