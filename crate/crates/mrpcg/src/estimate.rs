//! Count-based estimators of transition matrices and jump-time distributions.
//!
//! Both estimators condition on jump-entry events. The transition estimator
//! counts, for each lag t, where the process sits a time t after an entry
//! into each state, with per-lag denominators so entries whose window runs
//! past the data are dropped only at the lags they cannot support. The
//! jump-distribution estimator counts (destination, holding time) pairs
//! between consecutive entries; intervals cut off by the end of the data are
//! censored and excluded from the denominator.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::grid::{same_step, steps_of};
use crate::jump::JumpProcess;
use crate::{CgError, Result, StateId};

/// Stack of transition matrices indexed by lag `t = 0, tau, ..., t_max`.
///
/// `counts[l][i]` is the number of samples behind row `i` of `matrices[l]`;
/// a zero count flags the row as missing rather than fabricated. Series built
/// by exact computation or inference use a count of 1 to mean "defined".
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSeries {
    pub tau: f64,
    pub matrices: Vec<DMatrix<f64>>,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct TransitionSeriesFile {
    tau: f64,
    t_max: f64,
    matrices: Vec<Vec<Vec<f64>>>,
    counts: Vec<Vec<u64>>,
}

impl TransitionSeries {
    pub fn n_states(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// Largest lag index (so `t_max = n_lags() * tau`).
    pub fn n_lags(&self) -> usize {
        self.matrices.len() - 1
    }

    pub fn t_max(&self) -> f64 {
        self.n_lags() as f64 * self.tau
    }

    pub fn matrix(&self, lag: usize) -> &DMatrix<f64> {
        &self.matrices[lag]
    }

    /// True when row `i` at `lag` has no samples behind it.
    pub fn is_row_missing(&self, lag: usize, i: usize) -> bool {
        self.counts[lag][i] == 0
    }

    /// Shape checks that hold for every series, including inferred ones
    /// (whose raw entries may leave [0, 1]): square finite matrices,
    /// identity at lag 0, counts aligned with matrices.
    pub fn check_structure(&self) -> Result<()> {
        let n = self.n_states();
        if self.matrices.is_empty() || self.counts.len() != self.matrices.len() {
            return Err(CgError::InvalidInput(
                "matrices/counts length mismatch".into(),
            ));
        }
        if self.matrices[0] != DMatrix::identity(n, n) {
            return Err(CgError::InvalidInput(
                "lag-0 matrix must be the identity".into(),
            ));
        }
        for (l, m) in self.matrices.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(CgError::InvalidInput(format!(
                    "matrix at lag {l} is not {n}x{n}"
                )));
            }
            if m.iter().any(|p| !p.is_finite()) {
                return Err(CgError::InvalidInput(format!(
                    "non-finite entry at lag {l}"
                )));
            }
            if self.counts[l].len() != n {
                return Err(CgError::InvalidInput(format!(
                    "counts at lag {l} are not length {n}"
                )));
            }
        }
        Ok(())
    }

    /// Estimator-grade checks on top of [`Self::check_structure`]: entries in
    /// [0, 1] and counted rows summing to 1.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        for (l, m) in self.matrices.iter().enumerate() {
            for i in 0..self.n_states() {
                let row = m.row(i);
                if row.iter().any(|&p| !(-1e-12..=1.0 + 1e-12).contains(&p)) {
                    return Err(CgError::InvalidInput(format!(
                        "entry outside [0, 1] in row {i} at lag {l}"
                    )));
                }
                if self.counts[l][i] > 0 {
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > 1e-12 {
                        return Err(CgError::InvalidInput(format!(
                            "row {i} at lag {l} sums to {s}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = TransitionSeriesFile {
            tau: self.tau,
            t_max: self.t_max(),
            matrices: self
                .matrices
                .iter()
                .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            counts: self.counts.clone(),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &file)?;
        Ok(())
    }

    pub fn read_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: TransitionSeriesFile = serde_json::from_reader(f)?;
        let mut matrices = Vec::with_capacity(file.matrices.len());
        for (l, rows) in file.matrices.iter().enumerate() {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(CgError::InvalidInput(format!(
                    "matrix at lag {l} is not square"
                )));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            matrices.push(DMatrix::from_row_slice(n, n, &flat));
        }
        let ts = Self {
            tau: file.tau,
            matrices,
            counts: file.counts,
        };
        ts.check_structure()?;
        Ok(ts)
    }
}

/// Jump probability masses `P_IJ(t)` for `J != I` and `t = tau..=t_trunc`,
/// with per-state censoring counts and unassigned tail mass.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpDistribution {
    pub tau: f64,
    pub n_states: usize,
    /// `masses[l - 1]` holds the matrix of masses at lag `l`; diagonals are 0.
    pub masses: Vec<DMatrix<f64>>,
    /// Holding intervals cut off by the end of the data, per state.
    pub censored: Vec<u64>,
    /// Mass beyond the truncation lag, per state.
    pub tail: Vec<f64>,
    /// Uncensored holding intervals behind each state's masses; 0 for exact
    /// or synthetic distributions.
    pub samples: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct JumpDistributionFile {
    tau: f64,
    t_trunc: f64,
    n_states: usize,
    /// `[I, J, t, p]` records, nonzero masses only.
    masses: Vec<(StateId, StateId, f64, f64)>,
    censored: Vec<u64>,
    tail: Vec<f64>,
    samples: Vec<u64>,
}

impl JumpDistribution {
    /// An all-zero distribution over the given grid.
    pub fn zeros(tau: f64, n_states: usize, n_trunc: usize) -> Self {
        Self {
            tau,
            n_states,
            masses: vec![DMatrix::zeros(n_states, n_states); n_trunc],
            censored: vec![0; n_states],
            tail: vec![0.0; n_states],
            samples: vec![0; n_states],
        }
    }

    /// Number of lags in the truncated support (`t_trunc = n_trunc * tau`).
    pub fn n_trunc(&self) -> usize {
        self.masses.len()
    }

    pub fn t_trunc(&self) -> f64 {
        self.n_trunc() as f64 * self.tau
    }

    pub fn mass(&self, from: StateId, to: StateId, lag: usize) -> f64 {
        self.masses[lag - 1][(from - 1, to - 1)]
    }

    pub fn set_mass(&mut self, from: StateId, to: StateId, lag: usize, p: f64) {
        self.masses[lag - 1][(from - 1, to - 1)] = p;
    }

    /// Total assigned mass out of `state` within the truncation.
    pub fn assigned_mass(&self, state: StateId) -> f64 {
        self.masses.iter().map(|m| m.row(state - 1).sum()).sum()
    }

    /// True when the state has any outgoing mass or tail recorded.
    pub fn has_data(&self, state: StateId) -> bool {
        self.assigned_mass(state) > 0.0 || self.tail[state - 1] > 0.0
    }

    /// Nonnegativity, finiteness, and zero diagonal; holds for every
    /// distribution including ones recovered from noisy inversions (whose
    /// totals may drift off 1, which is reported rather than renormalized).
    pub fn check_structure(&self) -> Result<()> {
        for (l, m) in self.masses.iter().enumerate() {
            for i in 0..self.n_states {
                if m[(i, i)] != 0.0 {
                    return Err(CgError::InvalidInput(format!(
                        "diagonal mass at state {} lag {}",
                        i + 1,
                        l + 1
                    )));
                }
                if m.row(i).iter().any(|&p| p < 0.0 || !p.is_finite()) {
                    return Err(CgError::InvalidInput(format!(
                        "negative or non-finite mass in state {} at lag {}",
                        i + 1,
                        l + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// [`Self::check_structure`] plus exact per-state normalization
    /// (assigned + tail = 1) for every state with data.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        for i in 1..=self.n_states {
            if self.has_data(i) {
                let total = self.assigned_mass(i) + self.tail[i - 1];
                if (total - 1.0).abs() > 1e-12 {
                    return Err(CgError::InvalidInput(format!(
                        "state {i} masses + tail sum to {total}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut records = Vec::new();
        for (l, m) in self.masses.iter().enumerate() {
            for i in 0..self.n_states {
                for j in 0..self.n_states {
                    let p = m[(i, j)];
                    if p != 0.0 {
                        records.push((i + 1, j + 1, (l + 1) as f64 * self.tau, p));
                    }
                }
            }
        }
        records.sort_by(|a, b| {
            (a.0, a.1)
                .cmp(&(b.0, b.1))
                .then(a.2.partial_cmp(&b.2).unwrap())
        });
        let file = JumpDistributionFile {
            tau: self.tau,
            t_trunc: self.t_trunc(),
            n_states: self.n_states,
            masses: records,
            censored: self.censored.clone(),
            tail: self.tail.clone(),
            samples: self.samples.clone(),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &file)?;
        Ok(())
    }

    pub fn read_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: JumpDistributionFile = serde_json::from_reader(f)?;
        let n_trunc = steps_of(file.t_trunc, file.tau, "t_trunc")? as usize;
        let mut jd = Self::zeros(file.tau, file.n_states, n_trunc);
        jd.censored = file.censored;
        jd.tail = file.tail;
        jd.samples = file.samples;
        for (i, j, t, p) in file.masses {
            let lag = steps_of(t, file.tau, "mass record time")? as usize;
            if lag == 0 || lag > n_trunc || i == 0 || i > jd.n_states || j == 0 || j > jd.n_states {
                return Err(CgError::InvalidInput(format!(
                    "mass record ({i}, {j}, {t}) outside the declared grid"
                )));
            }
            jd.set_mass(i, j, lag, p);
        }
        jd.check_structure()?;
        Ok(jd)
    }
}

/// Options shared by the count-based estimators.
#[derive(Debug, Clone, Copy)]
pub struct EstimateOptions {
    /// Whether the first defined time counts as a jump entry. The entry
    /// condition "R was elsewhere one step before" is vacuous there; it is
    /// included by default.
    pub include_first_entry: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            include_first_entry: true,
        }
    }
}

/// Raw transition counts, mergeable across trajectory shards.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    pub tau: f64,
    pub n_states: usize,
    /// `numer[l][i * n + j]`: entries into `i+1` found in state `j+1` a lag
    /// `l` later.
    pub numer: Vec<Vec<u64>>,
    /// `denom[l][i]`: entries into `i+1` whose lag-`l` window fits the data.
    pub denom: Vec<Vec<u64>>,
}

impl TransitionCounts {
    fn new(tau: f64, n_states: usize, n_lags: usize) -> Self {
        Self {
            tau,
            n_states,
            numer: vec![vec![0; n_states * n_states]; n_lags + 1],
            denom: vec![vec![0; n_states]; n_lags + 1],
        }
    }

    /// Associative merge of count tensors from independent shards.
    pub fn merge(&self, other: &TransitionCounts) -> Result<TransitionCounts> {
        if !same_step(self.tau, other.tau)
            || self.n_states != other.n_states
            || self.numer.len() != other.numer.len()
        {
            return Err(CgError::InvalidInput(
                "count tensors have different shapes".into(),
            ));
        }
        let mut out = self.clone();
        for l in 0..out.numer.len() {
            for (a, b) in out.numer[l].iter_mut().zip(&other.numer[l]) {
                *a += b;
            }
            for (a, b) in out.denom[l].iter_mut().zip(&other.denom[l]) {
                *a += b;
            }
        }
        Ok(out)
    }

    /// Normalizes counts into a [`TransitionSeries`]. Rows with no samples
    /// are left at zero and flagged by their zero count.
    pub fn finalize(&self) -> TransitionSeries {
        let n = self.n_states;
        let mut matrices = Vec::with_capacity(self.numer.len());
        for l in 0..self.numer.len() {
            let mut m = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                let d = self.denom[l][i];
                if d > 0 {
                    for j in 0..n {
                        m[(i, j)] = self.numer[l][i * n + j] as f64 / d as f64;
                    }
                }
            }
            matrices.push(m);
        }
        // Lag 0 is the identity by convention regardless of sampling.
        matrices[0] = DMatrix::identity(n, n);
        TransitionSeries {
            tau: self.tau,
            matrices,
            counts: self.denom.clone(),
        }
    }
}

/// Counts entry-conditioned transitions up to lag `t_max`.
pub fn transition_counts(
    jp: &JumpProcess,
    t_max: f64,
    opts: &EstimateOptions,
) -> Result<TransitionCounts> {
    let n_lags = steps_of(t_max, jp.tau, "t_max")? as usize;
    jp.validate()?;
    let mut counts = TransitionCounts::new(jp.tau, jp.n_states, n_lags);
    let last = jp.last_index();
    let skip = usize::from(!opts.include_first_entry);
    for e in jp.entries.iter().skip(skip) {
        let i = e.state - 1;
        let max_l = (last - e.index).min(n_lags);
        for l in 0..=max_l {
            let j = jp.state_at(e.index + l).unwrap() - 1;
            counts.denom[l][i] += 1;
            counts.numer[l][i * jp.n_states + j] += 1;
        }
    }
    Ok(counts)
}

/// Estimates the transition series `T(t)` for `t = 0..=t_max` from simple
/// counts over jump entries.
pub fn estimate_transitions(jp: &JumpProcess, t_max: f64) -> Result<TransitionSeries> {
    estimate_transitions_opts(jp, t_max, &EstimateOptions::default())
}

pub fn estimate_transitions_opts(
    jp: &JumpProcess,
    t_max: f64,
    opts: &EstimateOptions,
) -> Result<TransitionSeries> {
    Ok(transition_counts(jp, t_max, opts)?.finalize())
}

/// Estimates the jump distribution `P_IJ(t)` from consecutive entry pairs.
pub fn estimate_jump_distribution(jp: &JumpProcess, t_trunc: f64) -> Result<JumpDistribution> {
    estimate_jump_distribution_opts(jp, t_trunc, &EstimateOptions::default())
}

pub fn estimate_jump_distribution_opts(
    jp: &JumpProcess,
    t_trunc: f64,
    opts: &EstimateOptions,
) -> Result<JumpDistribution> {
    let n_trunc = steps_of(t_trunc, jp.tau, "t_trunc")? as usize;
    if n_trunc == 0 {
        return Err(CgError::Config("t_trunc must be at least tau".into()));
    }
    jp.validate()?;
    let n = jp.n_states;
    let mut jd = JumpDistribution::zeros(jp.tau, n, n_trunc);
    let mut tail_counts = vec![0u64; n];
    let mut mass_counts = vec![vec![0u64; n * n_trunc]; 1];
    let mass_counts = &mut mass_counts[0];

    let skip = usize::from(!opts.include_first_entry);
    let entries = &jp.entries[skip.min(jp.entries.len())..];
    for w in entries.windows(2) {
        let (cur, next) = (w[0], w[1]);
        let i = cur.state - 1;
        let lag = next.index - cur.index;
        if lag <= n_trunc {
            mass_counts[i * n_trunc + (lag - 1)] += 1;
            jd.masses[lag - 1][(i, next.state - 1)] += 1.0;
        } else {
            tail_counts[i] += 1;
        }
        jd.samples[i] += 1;
    }
    // The final entry's holding interval is cut off by the end of the data.
    if let Some(e) = entries.last() {
        jd.censored[e.state - 1] += 1;
    }

    for i in 0..n {
        if jd.samples[i] == 0 {
            if jd.censored[i] > 0 {
                return Err(CgError::InvalidInput(format!(
                    "every holding interval for state {} is censored; lengthen the trajectory",
                    i + 1
                )));
            }
            continue;
        }
        let d = jd.samples[i] as f64;
        for m in jd.masses.iter_mut() {
            for j in 0..n {
                m[(i, j)] /= d;
            }
        }
        jd.tail[i] = tail_counts[i] as f64 / d;
    }
    jd.validate()?;
    Ok(jd)
}

/// Mean holding time per state: `sum_{J,t} t * P_IJ(t) / (1 - tail_I)`.
/// States with no data are omitted from the result.
pub fn mean_holding_times(
    jd: &JumpDistribution,
    tail_threshold: f64,
) -> Result<Vec<(StateId, f64)>> {
    let mut out = Vec::new();
    for i in 1..=jd.n_states {
        if !jd.has_data(i) {
            continue;
        }
        let tail = jd.tail[i - 1];
        if tail > tail_threshold {
            return Err(CgError::Diagnostic(format!(
                "state {i} has tail mass {tail} above threshold {tail_threshold}; increase t_trunc"
            )));
        }
        let mut mean = 0.0;
        for (l, m) in jd.masses.iter().enumerate() {
            mean += (l + 1) as f64 * jd.tau * m.row(i - 1).sum();
        }
        out.push((i, mean / (1.0 - tail)));
    }
    Ok(out)
}

/// Default tail threshold for [`mean_holding_times`].
pub const DEFAULT_TAIL_THRESHOLD: f64 = 0.01;
