#![forbid(unsafe_code)]

//! Coarse-graining of fine-grained stochastic trajectories into Markov
//! renewal processes.
//!
//! The pipeline goes: ingest or generate a trajectory of macrostate labels
//! ([`traj`]), build the decorrelation-time jump process ([`jump`]), estimate
//! transition matrices and jump-time distributions by counting ([`estimate`]),
//! fit discrete memory kernels by ridge-regularized least squares and
//! extrapolate transition matrices with them ([`kernel`]), convert between
//! transition matrices and jump-time distributions through the renewal
//! equation ([`renewal`]), simulate the resulting renewal process ([`sim`]),
//! and compare distributions ([`metrics`]). The [`exact`] module computes
//! ground-truth quantities on finite microstate chains (quasistationary
//! distributions, projector-based operator kernels, exact transition and
//! jump-time matrices) against which every estimator is validated.

pub mod error;
pub mod estimate;
pub mod exact;
pub mod grid;
pub mod jump;
pub mod kernel;
pub mod metrics;
pub mod renewal;
pub mod sim;
pub mod traj;

pub use error::{CgError, Result};

/// Macrostate identifier. Ids are 1-based: a trajectory over `N` macrostates
/// uses labels in `1..=N`, and id `I` maps to matrix row/column `I - 1`.
pub type StateId = usize;
