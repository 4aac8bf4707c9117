//! Run configuration: a JSON file of defaults, overridable per flag.
//!
//! Times are physical; every derived quantity is validated to sit on the
//! integer grid (tau a multiple of fine_step, cutoffs multiples of tau), so
//! all internal arithmetic is on step counts.

use std::path::Path;

use mrpcg::grid::{positive_steps_of, steps_of};
use mrpcg::jump::DecorrelationConfig;
use mrpcg::{CgError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Sampling interval of fine trajectories.
    pub fine_step: f64,
    /// Macroscopic step.
    pub tau: f64,
    /// Per-state decorrelation times; `None` means tau for every state.
    pub tau_states: Option<Vec<f64>>,
    /// Data cutoff for estimated transition matrices.
    pub t_max: f64,
    /// Kernel cutoff.
    pub t_mem: f64,
    /// Ridge coefficient; `None` selects the scale-relative default.
    pub lambda: Option<f64>,
    /// Truncation for jump distributions; `None` means t_max.
    pub t_trunc: Option<f64>,
    /// Horizon for inference and simulation; `None` means t_max.
    pub horizon: Option<f64>,
    /// Seed for every stochastic subcommand.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fine_step: 1.0,
            tau: 30.0,
            tau_states: None,
            t_max: 900.0,
            t_mem: 450.0,
            lambda: None,
            t_trunc: None,
            horizon: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path.as_ref()).map_err(|e| {
            CgError::InvalidInput(format!(
                "cannot open config {}: {e}",
                path.as_ref().display()
            ))
        })?);
        Ok(serde_json::from_reader(f)?)
    }

    pub fn t_trunc(&self) -> f64 {
        self.t_trunc.unwrap_or(self.t_max)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(self.t_max)
    }

    /// Decorrelation config for `n_states` macrostates.
    pub fn decorrelation(&self, n_states: usize) -> Result<DecorrelationConfig> {
        match &self.tau_states {
            None => Ok(DecorrelationConfig::uniform(self.tau, n_states)),
            Some(ts) => {
                if ts.len() != n_states {
                    return Err(CgError::Config(format!(
                        "tau_states lists {} states, data has {n_states}",
                        ts.len()
                    )));
                }
                Ok(DecorrelationConfig {
                    tau: self.tau,
                    tau_states: ts.clone(),
                })
            }
        }
    }
}

/// Checks grid and ordering constraints. Returns the warnings to print; all
/// violations are aggregated into one error listing the offending fields.
pub fn validate_config(cfg: &RunConfig) -> Result<Vec<String>> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();

    if cfg.fine_step <= 0.0 || cfg.fine_step.is_nan() {
        errors.push(format!(
            "fine_step: must be positive, got {}",
            cfg.fine_step
        ));
    } else {
        if let Err(e) = positive_steps_of(cfg.tau, cfg.fine_step, "tau") {
            errors.push(e.to_string());
        }
        if let Some(ts) = &cfg.tau_states {
            for (i, &t) in ts.iter().enumerate() {
                if let Err(e) = steps_of(t, cfg.fine_step, &format!("tau_states[{i}]")) {
                    errors.push(e.to_string());
                }
            }
        }
    }
    for (name, value) in [
        ("t_max", cfg.t_max),
        ("t_mem", cfg.t_mem),
        ("t_trunc", cfg.t_trunc()),
        ("horizon", cfg.horizon()),
    ] {
        if let Err(e) = positive_steps_of(value, cfg.tau, name) {
            errors.push(e.to_string());
        }
    }
    if cfg.t_mem > cfg.t_max {
        errors.push(format!(
            "t_mem: {} exceeds t_max = {}",
            cfg.t_mem, cfg.t_max
        ));
    }
    if let Some(l) = cfg.lambda {
        if l < 0.0 || l.is_nan() {
            errors.push(format!("lambda: must be >= 0, got {l}"));
        }
    }

    if errors.is_empty() {
        let ratio = cfg.t_mem / cfg.t_max;
        if ratio > 0.6 {
            warnings.push(format!(
                "t_mem = {} is {:.0}% of t_max: fewer residual lags enter the fit, so the \
                 kernels get noisier; a ratio near 0.5 works well",
                cfg.t_mem,
                100.0 * ratio
            ));
        } else if ratio < 0.2 {
            warnings.push(format!(
                "t_mem = {} is only {:.0}% of t_max: long memory may be truncated; a ratio \
                 near 0.5 works well",
                cfg.t_mem,
                100.0 * ratio
            ));
        }
        Ok(warnings)
    } else {
        Err(CgError::Config(errors.join("; ")))
    }
}
