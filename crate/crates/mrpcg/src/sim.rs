//! Simulation of the Markov renewal process defined by a jump distribution.
//!
//! Event-driven sampling in the BKL/Gillespie style, adapted to discrete
//! jump times: from the current state, the next (destination, holding time)
//! pair is drawn by inverse CDF over that state's masses. The generator is
//! ChaCha8 seeded with `seed_from_u64`, so runs are reproducible across
//! platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::estimate::JumpDistribution;
use crate::grid::positive_steps_of;
use crate::jump::{JumpEntry, JumpProcess};
use crate::{CgError, Result, StateId};

/// A simulated renewal-process trajectory: the entry list plus its horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct MrpTrajectory {
    pub tau: f64,
    pub n_states: usize,
    /// Entries at strictly increasing coarse indices; consecutive states
    /// distinct. Index 0 is the start state.
    pub entries: Vec<JumpEntry>,
    /// Coarse steps simulated: indices run `0..=horizon`.
    pub horizon: usize,
    pub seed: u64,
}

/// Tail mass above this fraction aborts the simulation instead of being
/// silently renormalized away.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 0.01;

/// Samples the renewal process from `start` up to `horizon`, returning the
/// trajectory and any warnings (nonzero tail mass is renormalized away, with
/// the bias bounded by the reported tail).
pub fn simulate_mrp(
    jd: &JumpDistribution,
    start: StateId,
    horizon: f64,
    seed: u64,
) -> Result<(MrpTrajectory, Vec<String>)> {
    simulate_mrp_with_tolerance(jd, start, horizon, seed, DEFAULT_TAIL_TOLERANCE)
}

pub fn simulate_mrp_with_tolerance(
    jd: &JumpDistribution,
    start: StateId,
    horizon: f64,
    seed: u64,
    tail_tolerance: f64,
) -> Result<(MrpTrajectory, Vec<String>)> {
    jd.check_structure()?;
    if start == 0 || start > jd.n_states {
        return Err(CgError::InvalidInput(format!(
            "start state {start} outside 1..={}",
            jd.n_states
        )));
    }
    let n_horizon = positive_steps_of(horizon, jd.tau, "horizon")? as usize;
    let mut warnings = Vec::new();

    // Per-state CDF over (lag, destination), lag-major for determinism.
    let n = jd.n_states;
    let mut cdfs: Vec<Vec<(f64, usize, StateId)>> = Vec::with_capacity(n);
    for i in 1..=n {
        let total = jd.assigned_mass(i);
        let tail = jd.tail[i - 1];
        if tail > tail_tolerance {
            return Err(CgError::InvalidInput(format!(
                "state {i} has tail mass {tail} above tolerance {tail_tolerance}; increase t_trunc"
            )));
        }
        if tail > 0.0 {
            warnings.push(format!(
                "state {i}: tail mass {tail} renormalized away; holding times are biased \
                 short by at most that fraction"
            ));
        }
        let mut cdf = Vec::new();
        if total > 0.0 {
            let mut acc = 0.0;
            for (l, m) in jd.masses.iter().enumerate() {
                for j in 1..=n {
                    let p = m[(i - 1, j - 1)];
                    if p > 0.0 {
                        acc += p / total;
                        cdf.push((acc, l + 1, j));
                    }
                }
            }
        }
        cdfs.push(cdf);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = vec![JumpEntry {
        index: 0,
        state: start,
    }];
    let mut t = 0usize;
    let mut cur = start;
    loop {
        let cdf = &cdfs[cur - 1];
        if cdf.is_empty() {
            return Err(CgError::InvalidInput(format!(
                "state {cur} is absorbing under truncation: no outgoing mass"
            )));
        }
        let u: f64 = rng.gen();
        let &(_, lag, dest) = cdf
            .iter()
            .find(|&&(c, _, _)| u < c)
            .unwrap_or_else(|| cdf.last().unwrap());
        t += lag;
        if t > n_horizon {
            break;
        }
        entries.push(JumpEntry {
            index: t,
            state: dest,
        });
        cur = dest;
    }

    Ok((
        MrpTrajectory {
            tau: jd.tau,
            n_states: jd.n_states,
            entries,
            horizon: n_horizon,
            seed,
        },
        warnings,
    ))
}

/// Expands the entry list into a piecewise-constant jump process on the
/// coarse grid, so the estimators can consume simulated data.
pub fn expand_to_grid(mt: &MrpTrajectory) -> Result<JumpProcess> {
    if mt.entries.is_empty() {
        return Err(CgError::InvalidInput("trajectory has no entries".into()));
    }
    let mut r = Vec::with_capacity(mt.horizon + 1);
    let mut e = 0;
    let mut cur = mt.entries[0].state;
    for n in 0..=mt.horizon {
        if e < mt.entries.len() && mt.entries[e].index == n {
            cur = mt.entries[e].state;
            e += 1;
        }
        r.push(cur);
    }
    let jp = JumpProcess {
        tau: mt.tau,
        n_states: mt.n_states,
        burn_in: 0,
        r,
        entries: mt.entries.clone(),
    };
    jp.validate()?;
    Ok(jp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{estimate_jump_distribution, mean_holding_times};

    fn delayed_jd() -> JumpDistribution {
        let mut jd = JumpDistribution::zeros(1.0, 2, 2);
        jd.set_mass(1, 2, 1, 0.5);
        jd.set_mass(1, 2, 2, 0.5);
        jd.set_mass(2, 1, 1, 1.0);
        jd
    }

    #[test]
    fn deterministic_masses_give_periodic_trajectory() {
        let mut jd = JumpDistribution::zeros(1.0, 2, 2);
        jd.set_mass(1, 2, 2, 1.0);
        jd.set_mass(2, 1, 1, 1.0);
        let (mt, warn) = simulate_mrp(&jd, 1, 30.0, 5).unwrap();
        assert!(warn.is_empty());
        // Cycle of length 3: state 1 holds 2, state 2 holds 1.
        let from_1 = mt.entries.iter().filter(|e| e.state == 2).count();
        assert_eq!(from_1, 10);
        for w in mt.entries.windows(2) {
            let lag = w[1].index - w[0].index;
            assert_eq!(lag, if w[0].state == 1 { 2 } else { 1 });
        }
    }

    #[test]
    fn mean_holding_time_matches_expectation() {
        let jd = delayed_jd();
        // Horizon long enough for ~1e5 jumps out of state 1.
        let (mt, _) = simulate_mrp(&jd, 1, 260_000.0, 42).unwrap();
        let jp = expand_to_grid(&mt).unwrap();
        let est = estimate_jump_distribution(&jp, 2.0).unwrap();
        let holding = mean_holding_times(&est, 0.01).unwrap();
        let n1 = est.samples[0] as f64;
        assert!(n1 > 8e4, "only {n1} jumps out of state 1");
        // sd of the holding time in state 1 is 0.5 tau.
        let se = 0.5 / n1.sqrt();
        assert!(
            (holding[0].1 - 1.5).abs() < 3.0 * se,
            "mean {} vs 1.5 +- {}",
            holding[0].1,
            3.0 * se
        );
    }

    #[test]
    fn same_seed_is_identical() {
        let jd = delayed_jd();
        let (a, _) = simulate_mrp(&jd, 1, 1000.0, 9).unwrap();
        let (b, _) = simulate_mrp(&jd, 1, 1000.0, 9).unwrap();
        assert_eq!(a, b);
        let (c, _) = simulate_mrp(&jd, 1, 1000.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn absorbing_state_is_an_error() {
        let mut jd = JumpDistribution::zeros(1.0, 2, 1);
        jd.set_mass(1, 2, 1, 1.0);
        // State 2 has no outgoing mass.
        let err = simulate_mrp(&jd, 2, 10.0, 0).unwrap_err();
        assert!(err.to_string().contains("absorbing"), "{err}");
    }

    #[test]
    fn expand_small_example() {
        let mt = MrpTrajectory {
            tau: 1.0,
            n_states: 2,
            entries: vec![
                JumpEntry { index: 0, state: 1 },
                JumpEntry { index: 3, state: 2 },
            ],
            horizon: 4,
            seed: 0,
        };
        let jp = expand_to_grid(&mt).unwrap();
        assert_eq!(jp.r, vec![1, 1, 1, 2, 2]);
        assert_eq!(jp.burn_in, 0);
    }

    #[test]
    fn expand_single_entry_is_constant() {
        let mt = MrpTrajectory {
            tau: 1.0,
            n_states: 1,
            entries: vec![JumpEntry { index: 0, state: 1 }],
            horizon: 3,
            seed: 0,
        };
        let jp = expand_to_grid(&mt).unwrap();
        assert_eq!(jp.r, vec![1, 1, 1, 1]);
    }

    #[test]
    fn estimated_distribution_converges_to_input() {
        let jd = delayed_jd();
        let (mt, _) = simulate_mrp(&jd, 1, 300_000.0, 123).unwrap();
        let jp = expand_to_grid(&mt).unwrap();
        let est = estimate_jump_distribution(&jp, 2.0).unwrap();
        let mut chi2 = 0.0;
        for i in 1..=2 {
            let n = est.samples[i - 1] as f64;
            for j in 1..=2 {
                for l in 1..=2 {
                    let p = jd.mass(i, j, l);
                    let se = (p * (1.0 - p) / n).sqrt().max(1e-9);
                    assert!(
                        (est.mass(i, j, l) - p).abs() < 3.0 * se,
                        "mass ({i},{j},{l}): {} vs {p}",
                        est.mass(i, j, l)
                    );
                    if p > 0.0 {
                        let d = n * (est.mass(i, j, l) - p);
                        chi2 += d * d / (n * p);
                    }
                }
            }
        }
        // One free cell (state 1 splits its mass); P(chi2_1 > 30) < 1e-7.
        assert!(chi2 < 30.0, "chi2 {chi2}");
    }

    #[test]
    fn tail_renormalization_warns() {
        let mut jd = JumpDistribution::zeros(1.0, 2, 1);
        jd.set_mass(1, 2, 1, 0.995);
        jd.tail[0] = 0.005;
        jd.set_mass(2, 1, 1, 1.0);
        let (_, warnings) = simulate_mrp(&jd, 1, 50.0, 3).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("renormalized"));
        // Above tolerance it errors instead.
        jd.masses[0][(0, 1)] = 0.9;
        jd.tail[0] = 0.1;
        assert!(simulate_mrp(&jd, 1, 50.0, 3).is_err());
    }
}
