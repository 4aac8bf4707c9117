//! Trajectory ingestion and synthetic trajectory generators.
//!
//! A [`LabeledTrajectory`] is the raw input to coarse graining: a sequence of
//! macrostate labels sampled at a fixed fine step. It can be loaded from CSV,
//! produced by labeling 2D coordinates against a rectangle geometry, or
//! generated synthetically from a finite Markov chain or an overdamped
//! Langevin sampler on a four-well potential.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{CgError, Result, StateId};

/// Row-sum tolerance for stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A fine-grained trajectory of macrostate labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    /// Macrostate ids, each in `1..=n_states`.
    pub labels: Vec<StateId>,
    /// Sampling interval of the underlying process.
    pub fine_step: f64,
    /// Number of macrostates.
    pub n_states: usize,
}

impl LabeledTrajectory {
    pub fn new(labels: Vec<StateId>, fine_step: f64, n_states: usize) -> Result<Self> {
        if fine_step <= 0.0 || !fine_step.is_finite() {
            return Err(CgError::InvalidInput(format!(
                "fine_step must be positive, got {fine_step}"
            )));
        }
        if labels.len() < 2 {
            return Err(CgError::InvalidInput(format!(
                "trajectory needs at least 2 samples, got {}",
                labels.len()
            )));
        }
        if n_states == 0 {
            return Err(CgError::InvalidInput("n_states must be positive".into()));
        }
        if let Some((k, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l == 0 || l > n_states)
        {
            return Err(CgError::InvalidInput(format!(
                "label {l} at step {k} is outside 1..={n_states}"
            )));
        }
        Ok(Self {
            labels,
            fine_step,
            n_states,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes `step,label` CSV.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,label")?;
        for (k, l) in self.labels.iter().enumerate() {
            writeln!(out, "{k},{l}")?;
        }
        Ok(())
    }

    /// Reads `step,label` CSV. `n_states` defaults to the largest label seen.
    pub fn read_csv<P: AsRef<Path>>(
        path: P,
        fine_step: f64,
        n_states: Option<usize>,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path.as_ref())?;
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let l: StateId = rec
                .get(1)
                .ok_or_else(|| CgError::InvalidInput("label column missing".into()))?
                .trim()
                .parse()
                .map_err(|e| CgError::InvalidInput(format!("bad label: {e}")))?;
            labels.push(l);
        }
        let n = n_states.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0));
        Self::new(labels, fine_step, n)
    }
}

/// Axis-aligned rectangle, half-open on both axes: `[xmin, xmax) x [ymin, ymax)`.
///
/// Half-openness makes tilings assign boundary points to exactly one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x < self.xmax && y >= self.ymin && y < self.ymax
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.xmin < other.xmax
            && other.xmin < self.xmax
            && self.ymin < other.ymax
            && other.ymin < self.ymax
    }
}

/// Macrostates defined as pairwise-disjoint rectangles in a 2D plane.
/// Rectangle `k` (0-based) is macrostate `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacrostateGeometry {
    pub rectangles: Vec<Rect>,
}

impl MacrostateGeometry {
    pub fn new(rectangles: Vec<Rect>) -> Result<Self> {
        if rectangles.is_empty() {
            return Err(CgError::Config(
                "geometry needs at least one rectangle".into(),
            ));
        }
        for r in &rectangles {
            if r.xmin >= r.xmax || r.ymin >= r.ymax {
                return Err(CgError::Config(format!("degenerate rectangle {r:?}")));
            }
        }
        for i in 0..rectangles.len() {
            for j in (i + 1)..rectangles.len() {
                if rectangles[i].overlaps(&rectangles[j]) {
                    return Err(CgError::Config(format!(
                        "rectangles {} and {} overlap",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { rectangles })
    }

    /// Regular `nx` x `ny` tiling of `[xmin, xmax) x [ymin, ymax)`.
    /// Cells are ordered x-outer, y-inner: cell (ix, iy) is macrostate
    /// `ix * ny + iy + 1`.
    pub fn grid(xmin: f64, xmax: f64, ymin: f64, ymax: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(CgError::Config("grid needs nx, ny >= 1".into()));
        }
        let dx = (xmax - xmin) / nx as f64;
        let dy = (ymax - ymin) / ny as f64;
        let mut rects = Vec::with_capacity(nx * ny);
        for ix in 0..nx {
            for iy in 0..ny {
                rects.push(Rect {
                    xmin: xmin + ix as f64 * dx,
                    xmax: if ix + 1 == nx {
                        xmax
                    } else {
                        xmin + (ix + 1) as f64 * dx
                    },
                    ymin: ymin + iy as f64 * dy,
                    ymax: if iy + 1 == ny {
                        ymax
                    } else {
                        ymin + (iy + 1) as f64 * dy
                    },
                });
            }
        }
        Self::new(rects)
    }

    /// The four quadrants of `[-bound, bound)^2`.
    pub fn quadrants(bound: f64) -> Result<Self> {
        Self::grid(-bound, bound, -bound, bound, 2, 2)
    }

    pub fn n_states(&self) -> usize {
        self.rectangles.len()
    }

    /// Macrostate id containing the point, if any.
    pub fn locate(&self, x: f64, y: f64) -> Option<StateId> {
        self.rectangles
            .iter()
            .position(|r| r.contains(x, y))
            .map(|k| k + 1)
    }

    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn read_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let geom: MacrostateGeometry = serde_json::from_reader(f)?;
        Self::new(geom.rectangles)
    }
}

/// Assigns each 2D point the macrostate of the rectangle containing it.
pub fn label_coordinates(
    points: &[(f64, f64)],
    geom: &MacrostateGeometry,
    fine_step: f64,
) -> Result<LabeledTrajectory> {
    let mut labels = Vec::with_capacity(points.len());
    for (k, &(x, y)) in points.iter().enumerate() {
        match geom.locate(x, y) {
            Some(l) => labels.push(l),
            None => return Err(CgError::PointOutsideGeometry { index: k, x, y }),
        }
    }
    LabeledTrajectory::new(labels, fine_step, geom.n_states())
}

/// Writes `step,x,y` CSV.
pub fn write_points_csv<P: AsRef<Path>>(points: &[(f64, f64)], path: P) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,x,y")?;
    for (k, (x, y)) in points.iter().enumerate() {
        writeln!(out, "{k},{x},{y}")?;
    }
    Ok(())
}

/// Reads `step,x,y` CSV.
pub fn read_points_csv<P: AsRef<Path>>(path: P) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize, name: &str| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| CgError::InvalidInput(format!("{name} column missing")))?
                .trim()
                .parse()
                .map_err(|e| CgError::InvalidInput(format!("bad {name}: {e}")))
        };
        points.push((parse(1, "x")?, parse(2, "y")?));
    }
    Ok(points)
}

/// A finite microstate Markov chain with a macrostate labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChainSpec {
    /// Row-stochastic transition matrix at one fine step.
    pub matrix: DMatrix<f64>,
    /// Macrostate id of each microstate; must be surjective onto `1..=N`.
    pub labels: Vec<StateId>,
}

#[derive(Serialize, Deserialize)]
struct FiniteChainFile {
    matrix: Vec<Vec<f64>>,
    labels: Vec<StateId>,
}

impl FiniteChainSpec {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<StateId>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(CgError::Config(format!(
                "transition matrix must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if labels.len() != matrix.nrows() {
            return Err(CgError::Config(format!(
                "labeling has {} entries for {} microstates",
                labels.len(),
                matrix.nrows()
            )));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(CgError::Config(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(CgError::Config(format!("row {i} sums to {s}, not 1")));
            }
        }
        let n_macro = *labels.iter().max().unwrap();
        let seen: BTreeSet<StateId> = labels.iter().copied().collect();
        if seen.contains(&0) {
            return Err(CgError::Config(
                "macrostate ids are 1-based; 0 is invalid".into(),
            ));
        }
        if seen.len() != n_macro {
            return Err(CgError::Config(format!(
                "labeling is not surjective onto 1..={n_macro}"
            )));
        }
        Ok(Self { matrix, labels })
    }

    /// Number of microstates.
    pub fn n_micro(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of macrostates.
    pub fn n_states(&self) -> usize {
        *self.labels.iter().max().unwrap()
    }

    /// Microstate indices belonging to macrostate `state`.
    pub fn members(&self, state: StateId) -> Vec<usize> {
        (0..self.n_micro())
            .filter(|&x| self.labels[x] == state)
            .collect()
    }

    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = FiniteChainFile {
            matrix: self
                .matrix
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            labels: self.labels.clone(),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &file)?;
        Ok(())
    }

    pub fn read_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: FiniteChainFile = serde_json::from_reader(f)?;
        let n = file.matrix.len();
        if file.matrix.iter().any(|r| r.len() != n) {
            return Err(CgError::Config("matrix rows have unequal lengths".into()));
        }
        let flat: Vec<f64> = file.matrix.into_iter().flatten().collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat), file.labels)
    }
}

/// Samples `steps` fine steps of the chain (including the start state) and
/// returns the macrostate label sequence. Deterministic in `seed`.
///
/// The trajectory's `fine_step` is 1.0: one chain step per unit time.
pub fn sample_finite_chain(
    spec: &FiniteChainSpec,
    steps: usize,
    start: usize,
    seed: u64,
) -> Result<LabeledTrajectory> {
    if steps < 1 {
        return Err(CgError::InvalidInput("steps must be >= 1".into()));
    }
    if start >= spec.n_micro() {
        return Err(CgError::InvalidInput(format!(
            "start microstate {start} out of range 0..{}",
            spec.n_micro()
        )));
    }
    let n = spec.n_micro();
    // Per-row CDFs so each step is a single uniform draw plus a scan.
    let cdf: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            spec.matrix
                .row(i)
                .iter()
                .map(|&p| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = start;
    let mut labels = Vec::with_capacity(steps);
    labels.push(spec.labels[x]);
    for _ in 1..steps {
        let u: f64 = rng.gen();
        x = cdf[x].iter().position(|&c| u < c).unwrap_or(n - 1);
        labels.push(spec.labels[x]);
    }
    LabeledTrajectory::new(labels, 1.0, spec.n_states())
}

/// Parameters of the overdamped Langevin sampler on the four-well potential
/// `V(x, y) = (x^2 - 1)^2 + (y^2 - 1)^2 + c * x * y`.
///
/// The coupling `c` tilts the basins away from the coordinate axes, so a
/// quadrant discretization deliberately cuts through basin boundaries.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LangevinParams {
    /// Cross-coupling coefficient `c`.
    pub coupling: f64,
    /// Inverse temperature.
    pub beta: f64,
    /// Integration step.
    pub dt: f64,
    /// Initial position.
    pub start: (f64, f64),
    /// Divergence guard: any coordinate exceeding this aborts the run.
    pub bound: f64,
    /// Suppress the noise term entirely (deterministic gradient flow).
    pub zero_noise: bool,
}

impl Default for LangevinParams {
    fn default() -> Self {
        Self {
            coupling: 0.3,
            beta: 3.0,
            dt: 1e-3,
            start: (1.0, 1.0),
            bound: 10.0,
            zero_noise: false,
        }
    }
}

/// Four-well potential value.
pub fn well_potential(x: f64, y: f64, coupling: f64) -> f64 {
    let ax = x * x - 1.0;
    let ay = y * y - 1.0;
    ax * ax + ay * ay + coupling * x * y
}

/// Gradient of [`well_potential`].
pub fn well_gradient(x: f64, y: f64, coupling: f64) -> (f64, f64) {
    (
        4.0 * x * (x * x - 1.0) + coupling * y,
        4.0 * y * (y * y - 1.0) + coupling * x,
    )
}

/// Euler-Maruyama discretization of overdamped Langevin dynamics on the
/// four-well potential. Returns `steps` positions starting at `params.start`.
/// Deterministic in `seed`.
pub fn sample_langevin(
    params: &LangevinParams,
    steps: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if params.dt <= 0.0 || params.dt.is_nan() {
        return Err(CgError::Config(format!(
            "dt must be positive, got {}",
            params.dt
        )));
    }
    if steps < 1 {
        return Err(CgError::InvalidInput("steps must be >= 1".into()));
    }
    if !params.zero_noise && (params.beta <= 0.0 || params.beta.is_nan()) {
        return Err(CgError::Config(format!(
            "beta must be positive, got {}",
            params.beta
        )));
    }
    let noise = if params.zero_noise {
        0.0
    } else {
        (2.0 * params.dt / params.beta).sqrt()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y) = params.start;
    let mut points = Vec::with_capacity(steps);
    points.push((x, y));
    for step in 1..steps {
        let (gx, gy) = well_gradient(x, y, params.coupling);
        let (zx, zy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        x += -gx * params.dt + noise * zx;
        y += -gy * params.dt + noise * zy;
        if x.abs() > params.bound || y.abs() > params.bound || !x.is_finite() || !y.is_finite() {
            return Err(CgError::TrajectoryDiverged { step, x, y });
        }
        points.push((x, y));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quadrants_unit() -> MacrostateGeometry {
        MacrostateGeometry::grid(-1.0, 1.0, -1.0, 1.0, 2, 2).unwrap()
    }

    #[test]
    fn quadrant_labeling() {
        let geom = quadrants_unit();
        // x < 0, y >= 0 is the second cell in x-outer, y-inner order.
        let t = label_coordinates(&[(-0.5, 0.5), (-0.5, 0.5)], &geom, 1.0).unwrap();
        assert_eq!(t.labels, vec![2, 2]);
        assert_eq!(geom.locate(-0.5, -0.5), Some(1));
        assert_eq!(geom.locate(0.5, -0.5), Some(3));
        assert_eq!(geom.locate(0.5, 0.5), Some(4));
    }

    #[test]
    fn point_outside_is_an_error_with_coordinates() {
        let geom = quadrants_unit();
        let err = label_coordinates(&[(2.0, 0.0), (0.0, 0.0)], &geom, 1.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("outside all macrostates"), "{msg}");
        assert!(msg.contains('2'), "{msg}");
    }

    #[test]
    fn pi_tiling_has_four_states() {
        let pi = std::f64::consts::PI;
        let geom = MacrostateGeometry::grid(-pi, pi, -pi, pi, 2, 2).unwrap();
        assert_eq!(geom.n_states(), 4);
        // Every point of the square lands in exactly one cell, including 0.
        assert!(geom.locate(0.0, 0.0).is_some());
        assert!(geom.locate(-pi, -pi).is_some());
        assert_eq!(geom.locate(pi, 0.0), None);
    }

    #[test]
    fn overlapping_rectangles_rejected() {
        let r = Rect {
            xmin: 0.0,
            xmax: 1.0,
            ymin: 0.0,
            ymax: 1.0,
        };
        let s = Rect {
            xmin: 0.5,
            xmax: 1.5,
            ymin: 0.5,
            ymax: 1.5,
        };
        assert!(MacrostateGeometry::new(vec![r, s]).is_err());
        // Sharing an edge is fine under the half-open convention.
        let t = Rect {
            xmin: 1.0,
            xmax: 2.0,
            ymin: 0.0,
            ymax: 1.0,
        };
        assert!(MacrostateGeometry::new(vec![r, t]).is_ok());
    }

    #[test]
    fn absorbing_chain_is_constant() {
        let spec = FiniteChainSpec::new(DMatrix::from_row_slice(1, 1, &[1.0]), vec![1]).unwrap();
        let t = sample_finite_chain(&spec, 100, 0, 7).unwrap();
        assert!(t.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn two_state_cycle_alternates() {
        let spec = FiniteChainSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            vec![1, 2],
        )
        .unwrap();
        let t = sample_finite_chain(&spec, 10, 1, 3).unwrap();
        assert_eq!(t.labels, vec![2, 1, 2, 1, 2, 1, 2, 1, 2, 1]);
    }

    #[test]
    fn non_stochastic_rows_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.5, 0.5]);
        assert!(FiniteChainSpec::new(m, vec![1, 2]).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.1, -0.1, 0.5, 0.5]);
        assert!(FiniteChainSpec::new(neg, vec![1, 2]).is_err());
    }

    /// Stationary vector oracle: left eigenvector of the transition matrix at
    /// eigenvalue 1, via the SVD null space of `M^T - I`.
    fn stationary_oracle(m: &DMatrix<f64>) -> Vec<f64> {
        let n = m.nrows();
        let a = m.transpose() - DMatrix::<f64>::identity(n, n);
        let svd = a.svd(true, true);
        // Null vector of `a` = right singular vector of the smallest
        // singular value.
        let k = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let v_t = svd.v_t.as_ref().unwrap();
        let v: Vec<f64> = (0..n).map(|i| v_t[(k, i)]).collect();
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    /// An 8-microstate chain with two loosely coupled groups.
    fn metastable8() -> FiniteChainSpec {
        let n = 8;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let same_group = (i < 4) == (j < 4);
                m[(i, j)] = if same_group { 1.0 } else { 0.02 };
            }
        }
        for i in 0..n {
            let s: f64 = m.row(i).iter().sum();
            for j in 0..n {
                m[(i, j)] /= s;
            }
        }
        FiniteChainSpec::new(m, vec![1, 1, 2, 2, 2, 3, 3, 3]).unwrap()
    }

    #[test]
    fn occupation_matches_stationary_vector() {
        let spec = metastable8();
        let pi = stationary_oracle(&spec.matrix);
        let steps = 1_000_000;
        let t = sample_finite_chain(&spec, steps, 0, 42).unwrap();
        // Microstate occupation is aggregated per macrostate label.
        let mut occ = vec![0.0; spec.n_states()];
        for &l in &t.labels {
            occ[l - 1] += 1.0;
        }
        let mut pi_macro = vec![0.0; spec.n_states()];
        for (x, &l) in spec.labels.iter().enumerate() {
            pi_macro[l - 1] += pi[x];
        }
        // Effective sample size discounted by the spectral bound on the
        // integrated autocorrelation time, (1 + lambda_2) / (1 - lambda_2).
        let eigs = spec.matrix.complex_eigenvalues();
        let mut mods: Vec<f64> = eigs.iter().map(|z| z.norm()).collect();
        mods.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let lambda2 = mods[1];
        let n_eff = steps as f64 * (1.0 - lambda2) / (1.0 + lambda2);
        for i in 0..spec.n_states() {
            let p = pi_macro[i];
            let se = (p * (1.0 - p) / n_eff).sqrt();
            let diff = (occ[i] / steps as f64 - p).abs();
            assert!(
                diff < 3.0 * se,
                "state {}: diff {diff} vs 3se {}",
                i + 1,
                3.0 * se
            );
        }
    }

    #[test]
    fn one_step_counts_match_matrix() {
        // Chi-square sanity on the empirical one-step transition counts.
        let spec = metastable8();
        let steps = 1_000_000;
        let t = sample_finite_chain(&spec, steps, 0, 11);
        // Re-run the chain itself (not just labels) by sampling microstates:
        // the labeling here is injective enough to track groups, so instead we
        // validate on a chain whose labeling is the identity.
        drop(t);
        let id_spec = FiniteChainSpec::new(spec.matrix.clone(), (1..=8).collect()).unwrap();
        let t = sample_finite_chain(&id_spec, steps, 0, 11).unwrap();
        let n = 8;
        let mut counts = vec![vec![0u64; n]; n];
        for w in t.labels.windows(2) {
            counts[w[0] - 1][w[1] - 1] += 1;
        }
        let mut chi2 = 0.0;
        let mut df = 0usize;
        for i in 0..n {
            let row_total: u64 = counts[i].iter().sum();
            for j in 0..n {
                let e = row_total as f64 * id_spec.matrix[(i, j)];
                if e > 0.0 {
                    let d = counts[i][j] as f64 - e;
                    chi2 += d * d / e;
                    df += 1;
                }
            }
            df -= 1;
        }
        // P(chi2_56 > 120) < 1e-6; far tail so the fixed seed passes robustly.
        assert!((50..=64).contains(&df), "df {df}");
        assert!(chi2 < 120.0, "chi2 {chi2} with df {df}");
    }

    #[test]
    fn langevin_zero_noise_fixed_point() {
        let params = LangevinParams {
            coupling: 0.0,
            zero_noise: true,
            ..Default::default()
        };
        let pts = sample_langevin(&params, 1000, 0).unwrap();
        for &(x, y) in &pts {
            assert!((x - 1.0).abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn langevin_visits_all_quadrants() {
        let params = LangevinParams {
            coupling: 0.0,
            ..Default::default()
        };
        let pts = sample_langevin(&params, 1_000_000, 1).unwrap();
        let geom = MacrostateGeometry::quadrants(10.0).unwrap();
        let mut seen = [false; 4];
        for &(x, y) in &pts {
            seen[geom.locate(x, y).unwrap() - 1] = true;
        }
        assert!(seen.iter().all(|&s| s), "visited {seen:?}");
    }

    #[test]
    fn langevin_deterministic_in_seed() {
        let params = LangevinParams::default();
        let a = sample_langevin(&params, 10_000, 9).unwrap();
        let b = sample_langevin(&params, 10_000, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_langevin(&params, 10_000, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn langevin_divergence_reports_step() {
        // A huge dt makes the quartic drift overshoot immediately.
        let params = LangevinParams {
            dt: 10.0,
            start: (2.0, 2.0),
            ..Default::default()
        };
        let err = sample_langevin(&params, 100, 0).unwrap_err();
        assert!(matches!(err, CgError::TrajectoryDiverged { .. }), "{err}");
        assert!(err.to_string().contains("decrease dt"));
    }

    #[test]
    fn chain_deterministic_in_seed() {
        let spec = metastable8();
        let a = sample_finite_chain(&spec, 5000, 2, 123).unwrap();
        let b = sample_finite_chain(&spec, 5000, 2, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("mrpcg_traj_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("labels.csv");
        let t = LabeledTrajectory::new(vec![1, 2, 2, 1], 0.5, 2).unwrap();
        t.write_csv(&path).unwrap();
        let back = LabeledTrajectory::read_csv(&path, 0.5, None).unwrap();
        assert_eq!(t, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        /// Rectangle centers always label as their own rectangle index.
        #[test]
        fn centers_label_as_own_index(
            nx in 1usize..5,
            ny in 1usize..5,
            x0 in -10.0f64..10.0,
            y0 in -10.0f64..10.0,
            w in 0.1f64..20.0,
            h in 0.1f64..20.0,
        ) {
            let geom = MacrostateGeometry::grid(x0, x0 + w, y0, y0 + h, nx, ny).unwrap();
            let centers: Vec<(f64, f64)> = geom.rectangles.iter().map(|r| r.center()).collect();
            if centers.len() >= 2 {
                let t = label_coordinates(&centers, &geom, 1.0).unwrap();
                prop_assert_eq!(t.labels, (1..=centers.len()).collect::<Vec<_>>());
            }
        }
    }
}
