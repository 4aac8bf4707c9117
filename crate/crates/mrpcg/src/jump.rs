//! Construction of the macroscopic jump process from a labeled trajectory.
//!
//! The jump process R lives on a coarse grid with step tau. It jumps into
//! macrostate J at coarse index n exactly when the fine trajectory has spent
//! the decorrelation time tau_J consecutively in J up to that instant, i.e.
//! the last `q_J + 1` fine samples (q_J = tau_J / fine_step) are all J.
//! Between such residence events R holds its value. Before the first
//! residence event R is undefined; that burn-in prefix is discarded and its
//! length recorded, and the first defined time counts as a jump entry.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{positive_steps_of, steps_of};
use crate::traj::LabeledTrajectory;
use crate::{CgError, Result, StateId};

/// Macroscopic step and per-state decorrelation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelationConfig {
    /// Macroscopic step tau; must be a positive integer multiple of the
    /// trajectory's fine step.
    pub tau: f64,
    /// Decorrelation time per macrostate (index `I - 1`); each must be a
    /// nonnegative integer multiple of the fine step.
    pub tau_states: Vec<f64>,
}

impl DecorrelationConfig {
    /// Same decorrelation time tau for every state, as in the default setup.
    pub fn uniform(tau: f64, n_states: usize) -> Self {
        Self {
            tau,
            tau_states: vec![tau; n_states],
        }
    }

    /// Smallest decorrelation time over all states.
    pub fn sigma(&self) -> f64 {
        self.tau_states
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Converts to fine-step counts `(p, q)` with `tau = p * fine_step` and
    /// `tau_I = q[I-1] * fine_step`.
    pub fn fine_steps(&self, fine_step: f64, n_states: usize) -> Result<(u64, Vec<u64>)> {
        if self.tau_states.len() != n_states {
            return Err(CgError::Config(format!(
                "decorrelation config covers {} states, trajectory has {n_states}",
                self.tau_states.len()
            )));
        }
        let p = positive_steps_of(self.tau, fine_step, "tau")?;
        let q = self
            .tau_states
            .iter()
            .enumerate()
            .map(|(i, &t)| steps_of(t, fine_step, &format!("tau_I for state {}", i + 1)))
            .collect::<Result<Vec<u64>>>()?;
        Ok((p, q))
    }
}

/// A jump-entry event: R jumped into `state` at coarse index `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JumpEntry {
    pub index: usize,
    pub state: StateId,
}

/// The coarse-grained jump process.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpProcess {
    /// Macroscopic step.
    pub tau: f64,
    /// Number of macrostates.
    pub n_states: usize,
    /// Coarse steps before the first defined value.
    pub burn_in: usize,
    /// Defined values of R at coarse indices `burn_in..burn_in + r.len()`.
    pub r: Vec<StateId>,
    /// Jump entries in increasing time order, starting with the first
    /// defined time.
    pub entries: Vec<JumpEntry>,
}

#[derive(Serialize, Deserialize)]
struct JumpSidecar {
    tau: f64,
    burn_in: usize,
    /// Extension key; sidecars without it fall back to the largest label
    /// seen, which undercounts states never visited.
    #[serde(default)]
    n_states: usize,
    entries: Vec<[usize; 2]>,
}

impl JumpProcess {
    /// Last defined coarse index.
    pub fn last_index(&self) -> usize {
        self.burn_in + self.r.len() - 1
    }

    /// Value of R at coarse index `n`, if defined.
    pub fn state_at(&self, n: usize) -> Option<StateId> {
        n.checked_sub(self.burn_in)
            .and_then(|k| self.r.get(k))
            .copied()
    }

    /// Checks the structural invariants: entries strictly increasing,
    /// consecutive entry states distinct, r changes only at entries.
    pub fn validate(&self) -> Result<()> {
        if self.r.is_empty() || self.entries.is_empty() {
            return Err(CgError::InvalidInput(
                "jump process has no defined values".into(),
            ));
        }
        if self.entries[0].index != self.burn_in {
            return Err(CgError::InvalidInput(
                "first entry must coincide with the first defined index".into(),
            ));
        }
        for w in self.entries.windows(2) {
            if w[1].index <= w[0].index {
                return Err(CgError::InvalidInput(
                    "entry times must be strictly increasing".into(),
                ));
            }
            if w[1].state == w[0].state {
                return Err(CgError::InvalidInput(
                    "consecutive entries must have distinct macrostates".into(),
                ));
            }
        }
        let mut e = 0;
        let mut cur = None;
        for (k, &s) in self.r.iter().enumerate() {
            let n = self.burn_in + k;
            if e < self.entries.len() && self.entries[e].index == n {
                cur = Some(self.entries[e].state);
                e += 1;
            }
            if cur != Some(s) {
                return Err(CgError::InvalidInput(format!(
                    "r changes value at coarse index {n} without a recorded entry"
                )));
            }
        }
        Ok(())
    }

    /// Writes the `n,label` CSV and the JSON sidecar holding tau, burn-in,
    /// state count, and the entry list.
    pub fn write_csv<P: AsRef<Path>, Q: AsRef<Path>>(
        &self,
        csv_path: P,
        sidecar_path: Q,
    ) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        writeln!(out, "n,label")?;
        for (k, s) in self.r.iter().enumerate() {
            writeln!(out, "{},{}", self.burn_in + k, s)?;
        }
        let sidecar = JumpSidecar {
            tau: self.tau,
            burn_in: self.burn_in,
            n_states: self.n_states,
            entries: self.entries.iter().map(|e| [e.index, e.state]).collect(),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(sidecar_path)?);
        serde_json::to_writer_pretty(f, &sidecar)?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>, Q: AsRef<Path>>(csv_path: P, sidecar_path: Q) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(sidecar_path)?);
        let sidecar: JumpSidecar = serde_json::from_reader(f)?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(csv_path.as_ref())?;
        let mut r = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let s: StateId = rec
                .get(1)
                .ok_or_else(|| CgError::InvalidInput("label column missing".into()))?
                .trim()
                .parse()
                .map_err(|e| CgError::InvalidInput(format!("bad label: {e}")))?;
            r.push(s);
        }
        let n_states = if sidecar.n_states > 0 {
            sidecar.n_states
        } else {
            r.iter().copied().max().unwrap_or(0)
        };
        let jp = Self {
            tau: sidecar.tau,
            burn_in: sidecar.burn_in,
            n_states,
            r,
            entries: sidecar
                .entries
                .iter()
                .map(|e| JumpEntry {
                    index: e[0],
                    state: e[1],
                })
                .collect(),
        };
        jp.validate()?;
        Ok(jp)
    }
}

/// Capped consecutive-time counter along the fine grid.
///
/// `C[k]` is the number of fine steps the trajectory has spent in its current
/// macrostate before step `k`, capped at that state's decorrelation count:
/// `C[k] = min(run length ending at k - 1, q_label[k])`, and `C[k] = 0` at
/// every label change. Times are `C[k] * fine_step`.
pub fn consecutive_clock(traj: &LabeledTrajectory, cfg: &DecorrelationConfig) -> Result<Vec<u64>> {
    let (_, q) = cfg.fine_steps(traj.fine_step, traj.n_states)?;
    let mut c = Vec::with_capacity(traj.len());
    let mut run: u64 = 0;
    for (k, &l) in traj.labels.iter().enumerate() {
        if k > 0 && traj.labels[k - 1] == l {
            run += 1;
        } else {
            run = 0;
        }
        c.push(run.min(q[l - 1]));
    }
    Ok(c)
}

/// Builds the jump process R from a labeled trajectory.
///
/// At each coarse index `n` (fine index `k = n * p`), the residence condition
/// for state J holds when the last `q_J + 1` fine samples are all J. R jumps
/// to J when the condition holds and J differs from the current value; it
/// holds its value otherwise. R is undefined before the first coarse index
/// where some residence condition holds; that index is recorded as the first
/// entry and the burn-in length is reported in the result.
pub fn build_jump_process(
    traj: &LabeledTrajectory,
    cfg: &DecorrelationConfig,
) -> Result<JumpProcess> {
    let (p, q) = cfg.fine_steps(traj.fine_step, traj.n_states)?;
    let clock = consecutive_clock(traj, cfg)?;
    let p = p as usize;
    let n_coarse = (traj.len() - 1) / p; // coarse indices 0..=n_coarse

    let mut r: Vec<StateId> = Vec::new();
    let mut entries: Vec<JumpEntry> = Vec::new();
    let mut burn_in = 0usize;
    let mut current: Option<StateId> = None;

    for n in 0..=n_coarse {
        let k = n * p;
        let l = traj.labels[k];
        let resident = clock[k] == q[l - 1];
        match current {
            None => {
                if resident {
                    current = Some(l);
                    burn_in = n;
                    entries.push(JumpEntry { index: n, state: l });
                    r.push(l);
                }
            }
            Some(cur) => {
                if resident && l != cur {
                    current = Some(l);
                    entries.push(JumpEntry { index: n, state: l });
                }
                r.push(current.unwrap());
            }
        }
    }

    if current.is_none() {
        return Err(CgError::NoResidence);
    }
    Ok(JumpProcess {
        tau: cfg.tau,
        n_states: traj.n_states,
        burn_in,
        r,
        entries,
    })
}
