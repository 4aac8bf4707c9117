//! Distances and baselines for comparing coarse-grained models.
//!
//! The headline metric is a discrete Cramer-von Mises distance between jump
//! distributions: per (from, to) pair, the squared cumulative difference of
//! the two normalized holding-time distributions, weighted by the reference
//! distribution. A single-matrix Markov baseline and a per-lag matrix
//! distance table support the model comparisons.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::estimate::{JumpDistribution, TransitionSeries};
use crate::grid::{positive_steps_of, same_step, steps_of};
use crate::jump::JumpProcess;
use crate::{CgError, Result, StateId};

/// Cramer-von Mises report: total error and per-pair contributions.
#[derive(Debug, Clone, Serialize)]
pub struct CvmReport {
    pub total: f64,
    /// `(from, to, contribution)` for each pair with reference mass.
    pub contributions: Vec<(StateId, StateId, f64)>,
    /// Pairs with zero reference mass, skipped from the sum.
    pub skipped: Vec<(StateId, StateId)>,
}

impl CvmReport {
    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

/// Options for [`cvm_error_opts`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CvmOptions {
    /// Normalize the estimate by the reference pair mass instead of its own
    /// (the default normalizes each distribution by its own mass).
    pub shared_normalization: bool,
}

/// Cramer-von Mises error between a reference and an estimated jump
/// distribution on the same tau grid.
pub fn cvm_error(p_ref: &JumpDistribution, p_est: &JumpDistribution) -> Result<CvmReport> {
    cvm_error_opts(p_ref, p_est, &CvmOptions::default())
}

pub fn cvm_error_opts(
    p_ref: &JumpDistribution,
    p_est: &JumpDistribution,
    opts: &CvmOptions,
) -> Result<CvmReport> {
    if !same_step(p_ref.tau, p_est.tau) {
        return Err(CgError::InvalidInput(format!(
            "tau grids differ: {} vs {}",
            p_ref.tau, p_est.tau
        )));
    }
    if p_ref.n_states != p_est.n_states {
        return Err(CgError::InvalidInput(format!(
            "state counts differ: {} vs {}",
            p_ref.n_states, p_est.n_states
        )));
    }
    let n = p_ref.n_states;
    let lags = p_ref.n_trunc().max(p_est.n_trunc());
    let mut contributions = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0.0;
    for i in 1..=n {
        for j in 1..=n {
            if i == j {
                continue;
            }
            let z_ref: f64 = (1..=p_ref.n_trunc()).map(|l| p_ref.mass(i, j, l)).sum();
            if z_ref == 0.0 {
                skipped.push((i, j));
                continue;
            }
            let z_est: f64 = (1..=p_est.n_trunc()).map(|l| p_est.mass(i, j, l)).sum();
            let z_est_norm = if opts.shared_normalization {
                z_ref
            } else {
                z_est
            };
            let mut cum_diff = 0.0;
            let mut contribution = 0.0;
            for l in 1..=lags {
                let r = if l <= p_ref.n_trunc() {
                    p_ref.mass(i, j, l)
                } else {
                    0.0
                };
                let e = if l <= p_est.n_trunc() {
                    p_est.mass(i, j, l)
                } else {
                    0.0
                };
                let e_norm = if z_est_norm > 0.0 {
                    e / z_est_norm
                } else {
                    0.0
                };
                cum_diff += r / z_ref - e_norm;
                contribution += cum_diff * cum_diff * r / z_ref;
            }
            total += contribution;
            contributions.push((i, j, contribution));
        }
    }
    Ok(CvmReport {
        total,
        contributions,
        skipped,
    })
}

/// Single-matrix Markov baseline: counts transitions of the macrostate
/// sequence at `lag`, then extends to longer horizons by matrix powers.
/// The returned series lives on the grid of `lag` multiples.
///
/// States never visited get an identity row (so powers stay stochastic) and
/// a zero count flag.
pub fn markov_baseline(jp: &JumpProcess, lag: f64, horizon: f64) -> Result<TransitionSeries> {
    let l = positive_steps_of(lag, jp.tau, "lag")? as usize;
    let n_powers = steps_of(horizon, lag, "horizon")? as usize;
    jp.validate()?;
    let n = jp.n_states;
    let mut counts = vec![0u64; n * n];
    for (k, &from) in jp.r.iter().enumerate() {
        if let Some(&to) = jp.r.get(k + l) {
            counts[(from - 1) * n + (to - 1)] += 1;
        }
    }
    let row_counts: Vec<u64> = (0..n)
        .map(|i| counts[i * n..(i + 1) * n].iter().sum())
        .collect();
    let mut single = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        if row_counts[i] > 0 {
            for j in 0..n {
                single[(i, j)] = counts[i * n + j] as f64 / row_counts[i] as f64;
            }
        } else {
            single[(i, i)] = 1.0;
        }
    }
    let mut matrices = vec![DMatrix::<f64>::identity(n, n)];
    for k in 1..=n_powers {
        let next = &single * &matrices[k - 1];
        matrices.push(next);
    }
    let counts_per_lag: Vec<Vec<u64>> = (0..=n_powers).map(|_| row_counts.clone()).collect();
    Ok(TransitionSeries {
        tau: lag,
        matrices,
        counts: counts_per_lag,
    })
}

/// Per-lag distance between two transition series on the same grid.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesDistance {
    /// `(t, max abs difference, Frobenius difference)` per lag.
    pub per_lag: Vec<(f64, f64, f64)>,
}

impl SeriesDistance {
    pub fn max_abs(&self) -> f64 {
        self.per_lag.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    /// Max-abs difference at one lag index.
    pub fn at_lag(&self, lag: usize) -> f64 {
        self.per_lag[lag].1
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,max_abs,frobenius")?;
        for (t, m, f) in &self.per_lag {
            writeln!(out, "{t},{m},{f}")?;
        }
        Ok(())
    }
}

/// Entrywise max-abs and Frobenius difference per lag, over the lags both
/// series cover.
pub fn series_distance(a: &TransitionSeries, b: &TransitionSeries) -> Result<SeriesDistance> {
    if !same_step(a.tau, b.tau) {
        return Err(CgError::InvalidInput(format!(
            "tau grids differ: {} vs {}",
            a.tau, b.tau
        )));
    }
    if a.n_states() != b.n_states() {
        return Err(CgError::InvalidInput(format!(
            "state counts differ: {} vs {}",
            a.n_states(),
            b.n_states()
        )));
    }
    let lags = a.n_lags().min(b.n_lags());
    let mut per_lag = Vec::with_capacity(lags + 1);
    for l in 0..=lags {
        let diff = a.matrices[l].clone() - &b.matrices[l];
        let max_abs = diff.abs().max();
        let frob = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        per_lag.push((l as f64 * a.tau, max_abs, frob));
    }
    Ok(SeriesDistance { per_lag })
}
