//! Memory-kernel fitting and transition inference.
//!
//! Given transition matrices `T(t)` for `t <= t_max`, the memory kernels
//! `K(s)`, `s = tau..=t_mem`, minimize
//!
//! ```text
//! L(K) = sum_{0 < t <= t_max} || T(t) - sum_{0 < s <= min(t, t_mem)} K(s) T(t-s) ||_F^2
//!        + lambda * sum_s || K(s) ||_F^2
//! ```
//!
//! Stationarity gives the block-normal equations
//! `sum_s K(s) (A(s,t) + lambda I delta_{s=t}) = B(t)` with correlation
//! matrices `A(s,t) = sum_r T(r-s) T(r-t)^T` and `B(t) = sum_r T(r) T(r-t)^T`
//! (`T(s) = 0` for `s < 0`, `T(0) = I`, and `r` runs over `tau..=t_max`).
//! The block Gram matrix is assembled as `sum_r U_r U_r^T` where `U_r` stacks
//! `T(r-tau)..T(r-t_mem)`, which makes it symmetric positive semidefinite by
//! construction. The solve is a Cholesky factorization of `gram + lambda I`,
//! with an SVD minimum-norm fallback when that fails at `lambda = 0`.
//!
//! Fitted kernels extrapolate the series through the recursion
//! `T(t) = sum_{0 < s <= min(t, t_mem)} K(s) T(t-s)`, which runs past
//! `t_max`. Inferred matrices are returned raw; row-sum deviation and
//! negative entries are surfaced as diagnostics rather than clamped.

use nalgebra::DMatrix;

use crate::estimate::TransitionSeries;
use crate::grid::positive_steps_of;
use crate::{CgError, Result};

/// Cutoffs and regularization for the kernel fit.
#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    /// Kernel cutoff; multiple of tau with `tau <= t_mem <= t_max`.
    pub t_mem: f64,
    /// Data cutoff; multiple of tau.
    pub t_max: f64,
    /// Ridge coefficient. `None` selects the scale-relative default
    /// `1e-6 * trace(gram) / (m * N)`.
    pub lambda: Option<f64>,
    /// Rows with fewer samples than this exclude their lag from the fit.
    pub min_count: u64,
}

impl FitConfig {
    pub fn new(t_mem: f64, t_max: f64) -> Self {
        Self {
            t_mem,
            t_max,
            lambda: None,
            min_count: 1,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    fn lag_counts(&self, tau: f64) -> Result<(usize, usize)> {
        let m = positive_steps_of(self.t_mem, tau, "t_mem")? as usize;
        let l = positive_steps_of(self.t_max, tau, "t_max")? as usize;
        if m > l {
            return Err(CgError::Config(format!(
                "t_mem = {} exceeds t_max = {}",
                self.t_mem, self.t_max
            )));
        }
        if let Some(lambda) = self.lambda {
            if lambda < 0.0 || !lambda.is_finite() {
                return Err(CgError::Config(format!(
                    "lambda must be >= 0, got {lambda}"
                )));
            }
        }
        Ok((m, l))
    }
}

/// The assembled block-normal equations.
#[derive(Debug, Clone)]
pub struct CorrelationSystem {
    pub tau: f64,
    pub n_states: usize,
    /// Number of kernels `m = t_mem / tau`.
    pub n_mem: usize,
    /// Symmetric PSD `(m N) x (m N)` matrix with block `(s, t) = A(s, t)`.
    pub gram: DMatrix<f64>,
    /// `N x (m N)` block row `[B(tau) .. B(t_mem)]`.
    pub rhs: DMatrix<f64>,
    /// `sum_r ||T(r)||_F^2` over the lags entering the loss.
    pub target_norm: f64,
    /// Lags `r` that entered the sums (a prefix of `tau..=t_max`).
    pub lags_used: usize,
    /// Lags within `t_max` excluded because some row lacked samples.
    pub excluded_lags: usize,
}

/// Assembles the correlation system from a transition series.
///
/// Lags whose matrices have a row with fewer than `min_count` samples are
/// excluded from the sums (sample counts are non-increasing in the lag, so
/// the usable lags form a prefix). Excluding lags needed to even form the
/// system is an error.
pub fn build_correlation_system(
    ts: &TransitionSeries,
    cfg: &FitConfig,
) -> Result<CorrelationSystem> {
    let (m, l) = cfg.lag_counts(ts.tau)?;
    if ts.n_lags() < l {
        return Err(CgError::Config(format!(
            "series covers lags up to {} but t_max requires {}",
            ts.t_max(),
            cfg.t_max
        )));
    }
    let n = ts.n_states();
    let usable = |lag: usize| ts.counts[lag].iter().all(|&c| c >= cfg.min_count.max(1));
    let mut lags_used = 0;
    for r in 1..=l {
        if !usable(r) {
            break;
        }
        lags_used = r;
    }
    if lags_used < m {
        return Err(CgError::Config(format!(
            "only {lags_used} usable lags (rows with enough samples); need at least {m} for t_mem"
        )));
    }

    let mn = m * n;
    let mut gram = DMatrix::<f64>::zeros(mn, mn);
    let mut rhs_stack = DMatrix::<f64>::zeros(mn, n);
    let mut target_norm = 0.0;
    let mut u = DMatrix::<f64>::zeros(mn, n);
    for r in 1..=lags_used {
        u.fill(0.0);
        for s in 1..=m {
            if r >= s {
                u.view_mut(((s - 1) * n, 0), (n, n))
                    .copy_from(&ts.matrices[r - s]);
            }
        }
        gram += &u * u.transpose();
        rhs_stack += &u * ts.matrices[r].transpose();
        target_norm += ts.matrices[r].iter().map(|x| x * x).sum::<f64>();
    }

    Ok(CorrelationSystem {
        tau: ts.tau,
        n_states: n,
        n_mem: m,
        gram,
        rhs: rhs_stack.transpose(),
        target_norm,
        lags_used,
        excluded_lags: l - lags_used,
    })
}

/// Fit diagnostics attached to a fitted kernel series.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitDiagnostics {
    /// Value of the (ridge-penalized) loss at the solution.
    pub loss: f64,
    /// Condition estimate of `gram + lambda I` (eigenvalue ratio).
    pub gram_condition: f64,
    /// True when the Cholesky factorization failed and the minimum-norm
    /// least-squares fallback was used.
    pub min_norm_fallback: bool,
    /// Copied from the correlation system.
    pub excluded_lags: usize,
}

/// A series of memory-kernel matrices `K(tau)..K(t_mem)`.
#[derive(Debug, Clone)]
pub struct KernelSeries {
    pub tau: f64,
    /// Ridge coefficient the kernels were fitted with (0 for exact kernels).
    pub lambda: f64,
    /// `kernels[s - 1]` is `K(s * tau)`.
    pub kernels: Vec<DMatrix<f64>>,
    /// Present for fitted kernels, absent for exactly computed ones.
    pub diagnostics: Option<FitDiagnostics>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct KernelSeriesFile {
    tau: f64,
    t_mem: f64,
    lambda: f64,
    kernels: Vec<Vec<Vec<f64>>>,
    loss: f64,
}

impl KernelSeries {
    pub fn n_states(&self) -> usize {
        self.kernels[0].nrows()
    }

    pub fn n_mem(&self) -> usize {
        self.kernels.len()
    }

    pub fn t_mem(&self) -> f64 {
        self.kernels.len() as f64 * self.tau
    }

    pub fn write_json<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let file = KernelSeriesFile {
            tau: self.tau,
            t_mem: self.t_mem(),
            lambda: self.lambda,
            kernels: self
                .kernels
                .iter()
                .map(|k| k.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            loss: self.diagnostics.as_ref().map(|d| d.loss).unwrap_or(0.0),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &file)?;
        Ok(())
    }

    pub fn read_json<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: KernelSeriesFile = serde_json::from_reader(f)?;
        if file.kernels.is_empty() {
            return Err(CgError::InvalidInput("kernel file holds no kernels".into()));
        }
        let n = file.kernels[0].len();
        let mut kernels = Vec::with_capacity(file.kernels.len());
        for rows in &file.kernels {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(CgError::InvalidInput(
                    "kernel matrices must all be NxN".into(),
                ));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            kernels.push(DMatrix::from_row_slice(n, n, &flat));
        }
        Ok(Self {
            tau: file.tau,
            lambda: file.lambda,
            kernels,
            diagnostics: None,
        })
    }
}

/// Solves the ridge-regularized normal equations for the kernels.
pub fn fit_kernels(cs: &CorrelationSystem, cfg: &FitConfig) -> Result<KernelSeries> {
    let (m, n, mn) = (cs.n_mem, cs.n_states, cs.n_mem * cs.n_states);
    if cs.gram.iter().any(|x| !x.is_finite()) || cs.rhs.iter().any(|x| !x.is_finite()) {
        return Err(CgError::Numerics(
            "correlation system has non-finite entries".into(),
        ));
    }
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => 1e-6 * cs.gram.trace() / mn as f64,
    };
    if lambda < 0.0 {
        return Err(CgError::Config(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }

    let mut a = cs.gram.clone();
    for i in 0..mn {
        a[(i, i)] += lambda;
    }
    let b = cs.rhs.transpose();

    let mut fallback = false;
    let z = match a.clone().cholesky() {
        Some(chol) => chol.solve(&b),
        None => {
            // Singular at lambda = 0 (or pathologically conditioned):
            // minimum-norm least squares via SVD.
            fallback = true;
            let svd = a.clone().svd(true, true);
            let eps = 1e-12 * svd.singular_values.max();
            svd.solve(&b, eps)
                .map_err(|e| CgError::Numerics(format!("SVD solve failed: {e}")))?
        }
    };

    let mut kernels = Vec::with_capacity(m);
    for s in 0..m {
        kernels.push(z.view((s * n, 0), (n, n)).transpose().into_owned());
    }

    // Loss at the solution, from the quadratic form:
    // ||T||^2 - 2 <Z, rhs^T> + <Z, (gram + lambda I) Z>.
    let gz = &a * &z;
    let cross: f64 = z.iter().zip(b.iter()).map(|(a, b)| a * b).sum();
    let quad: f64 = z.iter().zip(gz.iter()).map(|(a, b)| a * b).sum();
    let loss = (cs.target_norm - 2.0 * cross + quad).max(0.0);

    let eig = nalgebra::SymmetricEigen::new(a).eigenvalues;
    let max_e = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_e = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let gram_condition = if min_e > 0.0 {
        max_e / min_e
    } else {
        f64::INFINITY
    };

    Ok(KernelSeries {
        tau: cs.tau,
        lambda,
        kernels,
        diagnostics: Some(FitDiagnostics {
            loss,
            gram_condition,
            min_norm_fallback: fallback,
            excluded_lags: cs.excluded_lags,
        }),
    })
}

/// Convenience wrapper: assemble the correlation system and fit in one step.
pub fn fit_kernels_from_series(ts: &TransitionSeries, cfg: &FitConfig) -> Result<KernelSeries> {
    fit_kernels(&build_correlation_system(ts, cfg)?, cfg)
}

/// Evaluates the loss and its gradient with respect to each kernel.
///
/// The gradient is exact for the loss as defined (including the factor 2
/// from the squared norm and the ridge term `2 lambda K(t)`), so central
/// finite differences reproduce it. Setting it to zero yields the same
/// normal equations solved by [`fit_kernels`].
pub fn loss_and_gradient(
    ks: &KernelSeries,
    ts: &TransitionSeries,
    cfg: &FitConfig,
) -> Result<(f64, Vec<DMatrix<f64>>)> {
    let (m, l) = cfg.lag_counts(ts.tau)?;
    let n = ts.n_states();
    if ks.n_mem() != m || ks.n_states() != n {
        return Err(CgError::InvalidInput(format!(
            "kernel series is {} matrices of size {}, config expects {m} of size {n}",
            ks.n_mem(),
            ks.n_states()
        )));
    }
    if ts.n_lags() < l {
        return Err(CgError::Config("series does not cover t_max".into()));
    }
    let lambda = cfg.lambda.unwrap_or(0.0);

    // Residuals E(t) = T(t) - sum_s K(s) T(t-s) for t = 1..=l.
    let mut residuals = Vec::with_capacity(l + 1);
    residuals.push(DMatrix::<f64>::zeros(n, n)); // placeholder at lag 0
    let mut loss = 0.0;
    for t in 1..=l {
        let mut e = ts.matrices[t].clone();
        for s in 1..=m.min(t) {
            e -= &ks.kernels[s - 1] * &ts.matrices[t - s];
        }
        loss += e.iter().map(|x| x * x).sum::<f64>();
        residuals.push(e);
    }
    for k in &ks.kernels {
        loss += lambda * k.iter().map(|x| x * x).sum::<f64>();
    }

    let mut grads = Vec::with_capacity(m);
    for u in 1..=m {
        let mut g = DMatrix::<f64>::zeros(n, n);
        for t in u..=l {
            g += &residuals[t] * ts.matrices[t - u].transpose();
        }
        g *= -2.0;
        g += 2.0 * lambda * &ks.kernels[u - 1];
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Per-lag diagnostics from [`infer_transitions`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct InferDiagnostics {
    /// Max |row sum - 1| per lag `0..=horizon`.
    pub max_row_sum_dev: Vec<f64>,
    /// Most negative entry per lag (0 when none).
    pub most_negative: Vec<f64>,
}

/// Entry magnitude beyond which the recursion is declared divergent.
const DIVERGENCE_BOUND: f64 = 10.0;

/// Extrapolates transition matrices through the kernel recursion up to
/// `horizon` (which may exceed the fitted `t_max`).
pub fn infer_transitions(
    ks: &KernelSeries,
    horizon: f64,
) -> Result<(TransitionSeries, InferDiagnostics)> {
    let n_lags = crate::grid::steps_of(horizon, ks.tau, "horizon")? as usize;
    let n = ks.n_states();
    let m = ks.n_mem();
    let mut matrices = vec![DMatrix::<f64>::identity(n, n)];
    let mut diag = InferDiagnostics {
        max_row_sum_dev: vec![0.0],
        most_negative: vec![0.0],
    };
    for t in 1..=n_lags {
        let mut next = DMatrix::<f64>::zeros(n, n);
        for s in 1..=m.min(t) {
            next += &ks.kernels[s - 1] * &matrices[t - s];
        }
        let worst = next.iter().copied().fold(0.0f64, |a, x| a.max(x.abs()));
        if !worst.is_finite() || worst > DIVERGENCE_BOUND {
            return Err(CgError::Diagnostic(format!(
                "inference diverged at lag {t} (max |entry| = {worst}); kernel fit is unstable"
            )));
        }
        let row_dev = (0..n)
            .map(|i| (next.row(i).sum() - 1.0).abs())
            .fold(0.0, f64::max);
        let most_neg = next.iter().copied().fold(0.0f64, f64::min);
        diag.max_row_sum_dev.push(row_dev);
        diag.most_negative.push(most_neg);
        matrices.push(next);
    }
    let counts = vec![vec![1; n]; n_lags + 1];
    Ok((
        TransitionSeries {
            tau: ks.tau,
            matrices,
            counts,
        },
        diag,
    ))
}
