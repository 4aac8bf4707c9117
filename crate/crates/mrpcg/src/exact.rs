//! Exact reference computations on finite microstate chains.
//!
//! Everything the empirical pipeline estimates from data can be computed in
//! closed form when the underlying process is a finite Markov chain observed
//! at the macroscopic step. The construction is an augmented chain over
//! triples (microstate, jump-process value, capped residence clock):
//!
//! - the entry distribution into macrostate I is its quasistationary
//!   distribution (QSD), the dominant left eigenvector of the substochastic
//!   restriction of the chain to I;
//! - a projector P averages any function of the augmented state over the
//!   QSD at the entry configuration; with Q = Id - P, the operator kernels
//!   `K(n) = P T (Q T)^{n-1}` reproduce the transition matrices through the
//!   convolution identity `T(n) = sum_m K(m) T(n-m)` exactly;
//! - exact transition matrices and first-jump distributions come from
//!   propagating indicator functions and entry distributions through the
//!   augmented kernel.
//!
//! The augmented chain fixes its fine step equal to the macroscopic step
//! (one clock tick per step), so decorrelation times must be multiples of
//! tau here. [`convergence_study`] quantifies how fast the renewal
//! description of the jump process becomes exact as the decorrelation
//! counts grow.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::estimate::{JumpDistribution, TransitionSeries};
use crate::grid::steps_of;
use crate::jump::DecorrelationConfig;
use crate::kernel::KernelSeries;
use crate::renewal::renewal_forward;
use crate::traj::FiniteChainSpec;
use crate::{CgError, Result, StateId};

/// Default cap on the augmented state-space size.
pub const DEFAULT_STATE_CAP: usize = 100_000;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;

/// Quasistationary distribution of one macrostate.
#[derive(Debug, Clone, Serialize)]
pub struct Qsd {
    /// The macrostate this distribution belongs to.
    pub state: StateId,
    /// Microstate indices of the macrostate, in ascending order.
    pub members: Vec<usize>,
    /// Probability weights over `members`; nonnegative, summing to 1.
    pub eta: Vec<f64>,
    /// Dominant eigenvalue of the substochastic restriction (the per-step
    /// survival rate).
    pub lambda: f64,
    /// |second eigenvalue| / |first eigenvalue| of the restriction, when the
    /// restriction has more than one microstate.
    pub delta: Option<f64>,
}

/// Left power iteration on `m + Id`; the shift strictly separates the
/// dominant eigenvalue in modulus for any irreducible nonnegative matrix,
/// so the iteration converges even for periodic restrictions.
fn left_power_iteration(
    m: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, f64)> {
    let n = m.nrows();
    let mt = m.transpose();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let mut lambda_shifted = 0.0;
    for _ in 0..max_iter {
        let mut w = &mt * &v;
        w += &v; // the + Id shift
        let norm = w.sum();
        if norm <= 0.0 || norm.is_nan() {
            return Err(CgError::Numerics(
                "power iteration hit the zero vector".into(),
            ));
        }
        w /= norm;
        let diff = (&w - &v).abs().sum();
        v = w;
        lambda_shifted = norm;
        if diff <= tol {
            return Ok((v, lambda_shifted - 1.0));
        }
    }
    Err(CgError::Numerics(format!(
        "power iteration did not converge within {max_iter} iterations \
         (last eigenvalue estimate {})",
        lambda_shifted - 1.0
    )))
}

/// Microstates of `members` not strongly connected to `members[0]` in the
/// nonzero pattern of the restriction; empty means irreducible.
fn disconnected_members(restriction: &DMatrix<f64>, members: &[usize]) -> Vec<usize> {
    let n = members.len();
    let reach = |forward: bool| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let connected = if forward {
                    restriction[(i, j)] > 0.0
                } else {
                    restriction[(j, i)] > 0.0
                };
                if connected && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let bwd = reach(false);
    (0..n)
        .filter(|&i| !(fwd[i] && bwd[i]))
        .map(|i| members[i])
        .collect()
}

/// Computes the QSD of one macrostate: the dominant left eigenvector of the
/// substochastic restriction, normalized to sum 1.
pub fn compute_qsd(spec: &FiniteChainSpec, state: StateId) -> Result<Qsd> {
    if state == 0 || state > spec.n_states() {
        return Err(CgError::InvalidInput(format!(
            "macrostate {state} outside 1..={}",
            spec.n_states()
        )));
    }
    let members = spec.members(state);
    let k = members.len();
    let restriction = DMatrix::from_fn(k, k, |i, j| spec.matrix[(members[i], members[j])]);

    if k == 1 {
        return Ok(Qsd {
            state,
            members,
            eta: vec![1.0],
            lambda: restriction[(0, 0)],
            delta: None,
        });
    }

    let stranded = disconnected_members(&restriction, &members);
    if !stranded.is_empty() {
        return Err(CgError::InvalidInput(format!(
            "restriction of macrostate {state} is reducible; microstates {stranded:?} are not \
             strongly connected to microstate {}",
            members[0]
        )));
    }

    let (v, lambda) = left_power_iteration(&restriction, POWER_TOL, POWER_MAX_ITER)?;
    let resid = (restriction.transpose() * &v - lambda * &v).abs().max();
    if resid > 1e-10 {
        return Err(CgError::Numerics(format!(
            "QSD residual {resid} for macrostate {state} exceeds 1e-10"
        )));
    }

    let mut mods: Vec<f64> = restriction
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    mods.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let delta = if mods[0] > 0.0 {
        Some(mods[1] / mods[0])
    } else {
        None
    };

    Ok(Qsd {
        state,
        members,
        eta: v.iter().copied().collect(),
        lambda,
        delta,
    })
}

/// QSDs of every macrostate, indexed by `state - 1`.
pub fn compute_all_qsds(spec: &FiniteChainSpec) -> Result<Vec<Qsd>> {
    (1..=spec.n_states())
        .map(|i| compute_qsd(spec, i))
        .collect()
}

/// One augmented state: microstate, current jump-process value, and the
/// capped consecutive-residence clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugState {
    pub micro: usize,
    pub macro_state: StateId,
    pub clock: u64,
}

/// The augmented Markov chain over reachable (micro, R, clock) triples.
///
/// Transitions follow the base chain on the microstate; the clock increments
/// (capped at the target label's decorrelation count) while the label is
/// unchanged and resets to zero on a label change; R switches to the label
/// exactly when the clock reaches that label's count.
#[derive(Debug, Clone)]
pub struct AugmentedChain {
    pub spec: FiniteChainSpec,
    /// Macroscopic step; also the fine step of the augmented chain.
    pub tau: f64,
    /// Decorrelation counts per macrostate (`tau_I / tau`).
    pub q: Vec<u64>,
    /// Reachable augmented states in deterministic enumeration order.
    pub states: Vec<AugState>,
    index: HashMap<AugState, usize>,
    /// Sparse kernel rows: `rows[s]` lists `(successor, probability)`.
    rows: Vec<Vec<(usize, f64)>>,
}

impl AugmentedChain {
    pub fn n_aug(&self) -> usize {
        self.states.len()
    }

    pub fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    pub fn state_index(&self, s: &AugState) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Index of the entry configuration `(micro, state, q_state)`.
    pub fn entry_index(&self, micro: usize, state: StateId) -> Option<usize> {
        self.state_index(&AugState {
            micro,
            macro_state: state,
            clock: self.q[state - 1],
        })
    }

    /// Applies the kernel to a function of augmented states: `(T f)(s)`.
    pub fn apply_kernel(&self, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_aug(), |s, _| {
            self.rows[s].iter().map(|&(t, p)| p * f[t]).sum()
        })
    }

    /// Pushes a distribution forward one step: `mu^T T`.
    pub fn propagate(&self, mu: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_aug());
        for s in 0..self.n_aug() {
            let w = mu[s];
            if w != 0.0 {
                for &(t, p) in &self.rows[s] {
                    out[t] += w * p;
                }
            }
        }
        out
    }

    /// Indicator of the jump-process value: 1 where `R = state`.
    pub fn indicator(&self, state: StateId) -> DVector<f64> {
        DVector::from_fn(self.n_aug(), |s, _| {
            if self.states[s].macro_state == state {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Dense kernel matrix (intended for small chains and tests).
    pub fn kernel_dense(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.n_aug(), self.n_aug());
        for (s, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                t[(s, j)] += p;
            }
        }
        t
    }

    /// Successor of `state` when the base chain moves to microstate `y`.
    pub fn step(&self, state: &AugState, y: usize) -> AugState {
        let lab_y = self.spec.labels[y];
        let clock = if lab_y == self.spec.labels[state.micro] {
            (state.clock + 1).min(self.q[lab_y - 1])
        } else {
            0
        };
        let macro_state = if clock == self.q[lab_y - 1] {
            lab_y
        } else {
            state.macro_state
        };
        AugState {
            micro: y,
            macro_state,
            clock,
        }
    }
}

/// Enumerates the augmented chain reachable from all entry configurations
/// `(z, I, q_I)`, with the default state cap.
pub fn build_augmented_chain(
    spec: &FiniteChainSpec,
    cfg: &DecorrelationConfig,
) -> Result<AugmentedChain> {
    build_augmented_chain_capped(spec, cfg, DEFAULT_STATE_CAP)
}

pub fn build_augmented_chain_capped(
    spec: &FiniteChainSpec,
    cfg: &DecorrelationConfig,
    cap: usize,
) -> Result<AugmentedChain> {
    let n_macro = spec.n_states();
    if cfg.tau_states.len() != n_macro {
        return Err(CgError::Config(format!(
            "decorrelation config covers {} states, chain has {n_macro}",
            cfg.tau_states.len()
        )));
    }
    let q = cfg
        .tau_states
        .iter()
        .enumerate()
        .map(|(i, &t)| steps_of(t, cfg.tau, &format!("tau_I for state {}", i + 1)))
        .collect::<Result<Vec<u64>>>()?;

    let mut chain = AugmentedChain {
        spec: spec.clone(),
        tau: cfg.tau,
        q,
        states: Vec::new(),
        index: HashMap::new(),
        rows: Vec::new(),
    };

    fn intern(
        chain: &mut AugmentedChain,
        queue: &mut std::collections::VecDeque<usize>,
        cap: usize,
        s: AugState,
    ) -> Result<usize> {
        if let Some(&i) = chain.index.get(&s) {
            return Ok(i);
        }
        if chain.states.len() >= cap {
            return Err(CgError::Config(format!(
                "augmented state space exceeds the cap of {cap} states"
            )));
        }
        let i = chain.states.len();
        chain.states.push(s);
        chain.index.insert(s, i);
        chain.rows.push(Vec::new());
        queue.push_back(i);
        Ok(i)
    }

    let mut queue = std::collections::VecDeque::new();
    for state in 1..=n_macro {
        for z in spec.members(state) {
            let seed = AugState {
                micro: z,
                macro_state: state,
                clock: chain.q[state - 1],
            };
            intern(&mut chain, &mut queue, cap, seed)?;
        }
    }

    while let Some(i) = queue.pop_front() {
        let from = chain.states[i];
        let mut row = Vec::new();
        for y in 0..spec.n_micro() {
            let p = spec.matrix[(from.micro, y)];
            if p > 0.0 {
                let to = chain.step(&from, y);
                let j = intern(&mut chain, &mut queue, cap, to)?;
                row.push((j, p));
            }
        }
        chain.rows[i] = row;
    }

    Ok(chain)
}

/// The projector averaging a function over each macrostate's QSD at its
/// entry configuration, as a dense matrix over augmented states.
#[derive(Debug, Clone)]
pub struct ProjectorMatrix {
    pub pi: DMatrix<f64>,
}

impl ProjectorMatrix {
    pub fn new(ac: &AugmentedChain, qsds: &[Qsd]) -> Result<Self> {
        let n = ac.n_aug();
        let mut pi = DMatrix::zeros(n, n);
        for (s, st) in ac.states.iter().enumerate() {
            let qsd = &qsds[st.macro_state - 1];
            for (z, &w) in qsd.members.iter().zip(&qsd.eta) {
                let col = ac.entry_index(*z, st.macro_state).ok_or_else(|| {
                    CgError::Numerics(format!(
                        "entry configuration ({z}, {}) missing from the augmented chain",
                        st.macro_state
                    ))
                })?;
                pi[(s, col)] = w;
            }
        }
        Ok(Self { pi })
    }

    pub fn dim(&self) -> usize {
        self.pi.nrows()
    }

    /// `Pi f`.
    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.pi * f
    }

    /// `(Id - Pi) f`.
    pub fn apply_complement(&self, f: &DVector<f64>) -> DVector<f64> {
        f - self.apply(f)
    }

    /// Dense complement `Q = Id - Pi`.
    pub fn complement_dense(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.pi
    }
}

/// Exact transition matrices `T_IJ(n tau)` for `n = 0..=n_max`: propagate
/// each macrostate indicator through the kernel and average over the QSD at
/// every state's entry configuration.
pub fn exact_transitions(
    ac: &AugmentedChain,
    qsds: &[Qsd],
    n_max: usize,
) -> Result<TransitionSeries> {
    let n = ac.n_states();
    let entry_idx = entry_indices(ac, qsds)?;
    let mut matrices = vec![DMatrix::<f64>::identity(n, n)];
    matrices.extend(std::iter::repeat_with(|| DMatrix::<f64>::zeros(n, n)).take(n_max));
    for j in 1..=n {
        let mut f = ac.indicator(j);
        for lag in 1..=n_max {
            f = ac.apply_kernel(&f);
            for i in 1..=n {
                let qsd = &qsds[i - 1];
                let val: f64 = entry_idx[i - 1]
                    .iter()
                    .zip(&qsd.eta)
                    .map(|(&idx, &w)| w * f[idx])
                    .sum();
                matrices[lag][(i - 1, j - 1)] = val;
            }
        }
    }
    let counts = vec![vec![1; n]; n_max + 1];
    Ok(TransitionSeries {
        tau: ac.tau,
        matrices,
        counts,
    })
}

fn entry_indices(ac: &AugmentedChain, qsds: &[Qsd]) -> Result<Vec<Vec<usize>>> {
    (1..=ac.n_states())
        .map(|i| {
            qsds[i - 1]
                .members
                .iter()
                .map(|&z| {
                    ac.entry_index(z, i).ok_or_else(|| {
                        CgError::Numerics(format!(
                            "entry configuration ({z}, {i}) missing from the augmented chain"
                        ))
                    })
                })
                .collect()
        })
        .collect()
}

/// Operator memory kernels `K(n) = P T (Q T)^{n-1}` read off on macrostate
/// indicators. The projected value must be constant across the (micro,
/// clock) configurations within each macrostate; the spread is checked
/// against 1e-10 before extraction.
pub fn operator_kernels(
    ac: &AugmentedChain,
    proj: &ProjectorMatrix,
    n_max: usize,
) -> Result<KernelSeries> {
    let n = ac.n_states();
    if proj.dim() != ac.n_aug() {
        return Err(CgError::InvalidInput(
            "projector size does not match the chain".into(),
        ));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, st) in ac.states.iter().enumerate() {
        groups[st.macro_state - 1].push(s);
    }
    let mut kernels = vec![DMatrix::<f64>::zeros(n, n); n_max];
    for j in 1..=n {
        let mut h = ac.indicator(j);
        for lag in 1..=n_max {
            let w = ac.apply_kernel(&h);
            let g = proj.apply(&w);
            for i in 1..=n {
                let rows = &groups[i - 1];
                let first = g[rows[0]];
                let spread = rows
                    .iter()
                    .map(|&s| (g[s] - first).abs())
                    .fold(0.0f64, f64::max);
                if spread > 1e-10 {
                    return Err(CgError::Numerics(format!(
                        "projected kernel value varies by {spread} across configurations of \
                         macrostate {i}; projector is inconsistent"
                    )));
                }
                kernels[lag - 1][(i - 1, j - 1)] = first;
            }
            h = &w - &g;
        }
    }
    Ok(KernelSeries {
        tau: ac.tau,
        lambda: 0.0,
        kernels,
        diagnostics: None,
    })
}

/// Exact first-jump distribution: propagate each state's QSD entry
/// distribution with jump transitions made absorbing; the mass absorbed
/// into J at step n is `P_IJ(n tau)`. Residual mass at `t_trunc` is the
/// tail.
pub fn exact_jump_distribution(
    ac: &AugmentedChain,
    qsds: &[Qsd],
    t_trunc: f64,
) -> Result<JumpDistribution> {
    let n = ac.n_states();
    let n_trunc = steps_of(t_trunc, ac.tau, "t_trunc")? as usize;
    if n_trunc == 0 {
        return Err(CgError::Config("t_trunc must be at least tau".into()));
    }
    let entry_idx = entry_indices(ac, qsds)?;
    let mut jd = JumpDistribution::zeros(ac.tau, n, n_trunc);
    for i in 1..=n {
        let mut mu = DVector::<f64>::zeros(ac.n_aug());
        for (&idx, &w) in entry_idx[i - 1].iter().zip(&qsds[i - 1].eta) {
            mu[idx] = w;
        }
        for lag in 1..=n_trunc {
            let mut nu = ac.propagate(&mu);
            for (s, st) in ac.states.iter().enumerate() {
                if st.macro_state != i && nu[s] != 0.0 {
                    jd.masses[lag - 1][(i - 1, st.macro_state - 1)] += nu[s];
                    nu[s] = 0.0;
                }
            }
            mu = nu;
        }
        jd.tail[i - 1] = mu.sum();
    }
    jd.validate()?;
    Ok(jd)
}

/// Result of the renewal-convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    /// Decorrelation counts studied (`tau_I = q * tau` uniformly).
    pub q_values: Vec<u64>,
    /// Max-abs gap between the exact transition matrices and the renewal
    /// forward solve from the exact jump distribution, per q.
    pub errors: Vec<f64>,
    /// Geometric rate fitted by least squares on `ln err` vs `q`, over the
    /// points with error above numerical noise.
    pub fitted_rate: Option<f64>,
    /// Per-macrostate spectral ratio |lambda_2| / |lambda_1|.
    pub per_state_delta: Vec<Option<f64>>,
    /// Worst (largest) spectral ratio over the macrostates.
    pub spectral_delta: Option<f64>,
}

/// Measures how fast the renewal description of the jump process becomes
/// exact as the uniform decorrelation count q grows.
pub fn convergence_study(
    spec: &FiniteChainSpec,
    q_values: &[u64],
    n_max: usize,
) -> Result<ConvergenceReport> {
    if q_values.is_empty() || n_max == 0 {
        return Err(CgError::Config(
            "need at least one q value and one lag".into(),
        ));
    }
    let qsds = compute_all_qsds(spec)?;
    for qsd in &qsds {
        if qsd.delta.unwrap_or(0.0) >= 1.0 {
            return Err(CgError::InvalidInput(format!(
                "macrostate {} is not metastable: its restriction's spectral ratio is {:?}, \
                 so residence never decorrelates",
                qsd.state, qsd.delta
            )));
        }
    }
    let mut errors = Vec::with_capacity(q_values.len());
    for &q in q_values {
        let cfg = DecorrelationConfig {
            tau: 1.0,
            tau_states: vec![q as f64; spec.n_states()],
        };
        let ac = build_augmented_chain(spec, &cfg)?;
        let ts = exact_transitions(&ac, &qsds, n_max)?;
        let jd = exact_jump_distribution(&ac, &qsds, n_max as f64)?;
        let (fwd, _) = renewal_forward(&jd, n_max as f64)?;
        let mut err = 0.0f64;
        for lag in 1..=n_max {
            err = err.max((ts.matrices[lag].clone() - &fwd.matrices[lag]).abs().max());
        }
        errors.push(err);
    }

    // ln err = a + q ln(rate): ordinary least squares over the clean points.
    let pts: Vec<(f64, f64)> = q_values
        .iter()
        .zip(&errors)
        .filter(|(_, &e)| e > 1e-13)
        .map(|(&q, &e)| (q as f64, e.ln()))
        .collect();
    let fitted_rate = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() > 1e-12 {
            Some(((n * sxy - sx * sy) / denom).exp())
        } else {
            None
        }
    } else {
        None
    };

    let per_state_delta: Vec<Option<f64>> = qsds.iter().map(|q| q.delta).collect();
    let spectral_delta = per_state_delta
        .iter()
        .filter_map(|d| *d)
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |a| a.max(d)))
        });

    Ok(ConvergenceReport {
        q_values: q_values.to_vec(),
        errors,
        fitted_rate,
        per_state_delta,
        spectral_delta,
    })
}
