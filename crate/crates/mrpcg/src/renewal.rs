//! The renewal equation: forward solve and inversion.
//!
//! Forward: given jump masses P, the transition matrices satisfy
//! `T(t) = sum_{0 < s <= t} P(s) T(t-s) + F(t)` with the diagonal survival
//! matrix `F_II(t) = 1 - sum_{s <= t} sum_L P_IL(s)`. Inversion runs the same
//! recursion backwards: since `T(0)` is the identity, the `s = t` term
//! isolates `P(t)`, so `M(t) = T(t) - sum_{0 < s < t} P(s) T(t-s)` has the
//! new masses off-diagonal and the survival on the diagonal. The diagonal is
//! compared against the survival implied by the recovered masses; a large
//! discrepancy means the input is not renewal-consistent (decorrelation
//! times too small).

use nalgebra::{DMatrix, DVector};

use crate::estimate::{JumpDistribution, TransitionSeries};
use crate::grid::steps_of;
use crate::{CgError, Result};

/// Diagonal survival matrices `F(t)` on the lag grid `0..=n_trunc`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalMatrix {
    pub tau: f64,
    /// `values[l]` holds the diagonal of `F(l * tau)`.
    pub values: Vec<DVector<f64>>,
}

impl SurvivalMatrix {
    pub fn value(&self, state: usize, lag: usize) -> f64 {
        self.values[lag][state - 1]
    }
}

/// Survival from cumulative jump mass: `F_II(t) = 1 - sum_{s<=t, L} P_IL(s)`.
pub fn survival_from_jumps(jd: &JumpDistribution) -> SurvivalMatrix {
    let n = jd.n_states;
    let mut values = Vec::with_capacity(jd.n_trunc() + 1);
    let mut cum = DVector::<f64>::zeros(n);
    values.push(DVector::from_element(n, 1.0));
    for m in &jd.masses {
        for i in 0..n {
            cum[i] += m.row(i).sum();
        }
        values.push(DVector::from_fn(n, |i, _| 1.0 - cum[i]));
    }
    SurvivalMatrix {
        tau: jd.tau,
        values,
    }
}

/// Forward-solves the renewal equation up to `horizon`, returning the
/// transition series and any warnings (tail mass under truncation induces
/// error only at lags beyond the truncation).
pub fn renewal_forward(
    jd: &JumpDistribution,
    horizon: f64,
) -> Result<(TransitionSeries, Vec<String>)> {
    jd.validate()?;
    let n_lags = steps_of(horizon, jd.tau, "horizon")? as usize;
    let n = jd.n_states;
    let mut warnings = Vec::new();
    let max_tail = jd.tail.iter().copied().fold(0.0, f64::max);
    if n_lags > jd.n_trunc() && max_tail > 1e-12 {
        warnings.push(format!(
            "tail mass up to {max_tail} beyond t_trunc = {}: transition matrices at lags past it \
             carry error bounded by the cumulative tail",
            jd.t_trunc()
        ));
    }

    let survival = survival_from_jumps(jd);
    let mut matrices: Vec<DMatrix<f64>> = Vec::with_capacity(n_lags + 1);
    matrices.push(DMatrix::identity(n, n));
    for t in 1..=n_lags {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for s in 1..=t.min(jd.n_trunc()) {
            m += &jd.masses[s - 1] * &matrices[t - s];
        }
        let f_lag = t.min(jd.n_trunc());
        for i in 0..n {
            m[(i, i)] += survival.values[f_lag][i];
        }
        matrices.push(m);
    }
    let counts = vec![vec![1; n]; n_lags + 1];
    Ok((
        TransitionSeries {
            tau: jd.tau,
            matrices,
            counts,
        },
        warnings,
    ))
}

/// Tolerances for [`renewal_invert_opts`]. Defaults suit exact inputs;
/// loosen them for matrices estimated or inferred from data.
#[derive(Debug, Clone, Copy)]
pub struct InvertOptions {
    /// Recovered masses in `[-clamp_tol, 0)` are clamped to zero; anything
    /// below `-clamp_tol` is an error.
    pub clamp_tol: f64,
    /// Maximum allowed discrepancy between the diagonal residual and the
    /// survival implied by the recovered masses.
    pub diag_tol: f64,
    /// Row-sum deviation from 1 tolerated in the input matrices.
    pub row_sum_tol: f64,
    /// Inversion stops once every state's survival falls below this.
    pub survival_floor: f64,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            clamp_tol: 1e-8,
            diag_tol: 1e-6,
            row_sum_tol: 1e-6,
            survival_floor: 1e-6,
        }
    }
}

impl InvertOptions {
    /// Loose tolerances for matrices carrying statistical or fit error.
    pub fn noisy() -> Self {
        Self {
            clamp_tol: 0.2,
            diag_tol: 0.5,
            row_sum_tol: 0.5,
            survival_floor: 1e-6,
        }
    }
}

/// Diagnostics from the inversion.
#[derive(Debug, Clone, serde::Serialize)]
pub struct InvertReport {
    /// Largest |diagonal residual - implied survival| observed.
    pub max_diag_discrepancy: f64,
    /// Number of small negative masses clamped to zero.
    pub clamped_entries: usize,
    /// Total mass removed by clamping (reported, not renormalized).
    pub clamped_mass: f64,
    /// Lag at which the recursion stopped.
    pub stopped_lag: usize,
}

/// Recovers the jump distribution from a transition series by recursive
/// deconvolution with default (exact-input) tolerances.
pub fn renewal_invert(ts: &TransitionSeries) -> Result<(JumpDistribution, InvertReport)> {
    renewal_invert_opts(ts, &InvertOptions::default())
}

pub fn renewal_invert_opts(
    ts: &TransitionSeries,
    opts: &InvertOptions,
) -> Result<(JumpDistribution, InvertReport)> {
    let n = ts.n_states();
    let n_lags = ts.n_lags();
    if n_lags == 0 {
        return Err(CgError::InvalidInput("series has no lags beyond 0".into()));
    }
    let mut jd = JumpDistribution::zeros(ts.tau, n, n_lags);
    let mut cum = vec![0.0f64; n];
    let mut report = InvertReport {
        max_diag_discrepancy: 0.0,
        clamped_entries: 0,
        clamped_mass: 0.0,
        stopped_lag: 0,
    };

    for t in 1..=n_lags {
        // Row-stochasticity is checked lazily: only lags the recursion
        // actually consumes are validated.
        for i in 0..n {
            let s: f64 = ts.matrices[t].row(i).sum();
            if (s - 1.0).abs() > opts.row_sum_tol {
                return Err(CgError::Diagnostic(format!(
                    "input row {} at lag {t} sums to {s}; not a transition matrix within {}",
                    i + 1,
                    opts.row_sum_tol
                )));
            }
        }
        let mut m = ts.matrices[t].clone();
        for s in 1..t {
            m -= &jd.masses[s - 1] * &ts.matrices[t - s];
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let p = m[(i, j)];
                if p < -opts.clamp_tol {
                    return Err(CgError::Diagnostic(format!(
                        "recovered mass {} -> {} at lag {t} is {p}; input is not \
                         renewal-consistent (decorrelation times too small?)",
                        i + 1,
                        j + 1
                    )));
                }
                if p < 0.0 {
                    report.clamped_entries += 1;
                    report.clamped_mass += -p;
                    jd.masses[t - 1][(i, j)] = 0.0;
                } else {
                    jd.masses[t - 1][(i, j)] = p;
                }
            }
        }
        for i in 0..n {
            cum[i] += jd.masses[t - 1].row(i).sum();
            let implied = 1.0 - cum[i];
            let disc = (m[(i, i)] - implied).abs();
            report.max_diag_discrepancy = report.max_diag_discrepancy.max(disc);
            if disc > opts.diag_tol {
                return Err(CgError::Diagnostic(format!(
                    "diagonal residual for state {} at lag {t} deviates from implied survival \
                     by {disc}; input is not renewal-consistent (decorrelation times too small?)",
                    i + 1
                )));
            }
        }
        report.stopped_lag = t;
        if cum.iter().all(|&c| 1.0 - c <= opts.survival_floor) {
            break;
        }
    }

    for i in 0..n {
        jd.tail[i] = if cum[i] > 0.0 {
            (1.0 - cum[i]).max(0.0)
        } else {
            0.0
        };
    }
    // Truncate trailing all-zero lags past the stop point.
    jd.masses.truncate(report.stopped_lag);
    Ok((jd, report))
}
