//! The end-to-end pipeline: split the trajectory, build jump processes,
//! estimate on both halves, then for each kernel count fit on the training
//! half, infer, invert, and score against the held-out reference.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use mrpcg::estimate::{estimate_jump_distribution, estimate_transitions};
use mrpcg::jump::{build_jump_process, JumpProcess};
use mrpcg::kernel::{fit_kernels_from_series, infer_transitions, FitConfig};
use mrpcg::metrics::cvm_error;
use mrpcg::renewal::{renewal_invert_opts, InvertOptions};
use mrpcg::traj::{label_coordinates, read_points_csv, LabeledTrajectory, MacrostateGeometry};
use mrpcg::{CgError, Result, StateId};
use serde::Serialize;

use crate::config::{validate_config, RunConfig};
use crate::{check_input, Overrides};

#[derive(Args)]
pub struct PipelineArgs {
    /// Labeled trajectory CSV (alternative to --points + --geometry).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Points CSV, labeled on the fly against --geometry.
    #[arg(long, requires = "geometry", conflicts_with = "labels")]
    points: Option<PathBuf>,
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Kernel counts to sweep (default: t_mem / tau).
    #[arg(long, value_delimiter = ',')]
    kernel_counts: Option<Vec<usize>>,
    /// Negative-mass clamp tolerance for the inversion of inferred series.
    #[arg(long, default_value_t = 0.2)]
    clamp_tol: f64,
    /// Diagonal-consistency bound for the inversion of inferred series.
    #[arg(long, default_value_t = 0.5)]
    diag_tol: f64,
    /// Row-sum deviation tolerated in inferred matrices.
    #[arg(long, default_value_t = 0.5)]
    row_sum_tol: f64,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Serialize)]
struct SplitReport {
    n_fine_steps: usize,
    burn_in: usize,
    n_entries: usize,
    entries_per_state: Vec<u64>,
    censored: Vec<u64>,
    tail: Vec<f64>,
}

#[derive(Serialize)]
struct KernelRun {
    n_kernels: usize,
    t_mem: f64,
    lambda: f64,
    loss: f64,
    gram_condition: f64,
    min_norm_fallback: bool,
    excluded_lags: usize,
    infer_max_row_sum_dev: f64,
    infer_most_negative: f64,
    invert_max_diag_discrepancy: f64,
    invert_clamped_entries: usize,
    invert_clamped_mass: f64,
    invert_stopped_lag: usize,
    cvm_error: f64,
    cvm_skipped: Vec<(StateId, StateId)>,
}

#[derive(Serialize)]
struct PipelineSummary {
    tau: f64,
    t_max: f64,
    t_trunc: f64,
    n_states: usize,
    train: SplitReport,
    test: SplitReport,
    warnings: Vec<String>,
    runs: Vec<KernelRun>,
}

fn split_report(
    jp: &JumpProcess,
    traj_len: usize,
    tail: Vec<f64>,
    censored: Vec<u64>,
    samples: Vec<u64>,
) -> SplitReport {
    SplitReport {
        n_fine_steps: traj_len,
        burn_in: jp.burn_in,
        n_entries: jp.entries.len(),
        entries_per_state: samples,
        censored,
        tail,
    }
}

pub fn run(args: PipelineArgs, base: RunConfig) -> Result<()> {
    let cfg = args.overrides.apply(base);
    let mut warnings = validate_config(&cfg)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let traj = match (&args.labels, &args.points, &args.geometry) {
        (Some(labels), None, _) => {
            check_input(labels)?;
            LabeledTrajectory::read_csv(labels, cfg.fine_step, None)?
        }
        (None, Some(points), Some(geometry)) => {
            check_input(points)?;
            check_input(geometry)?;
            let pts = read_points_csv(points)?;
            let geom = MacrostateGeometry::read_json(geometry)?;
            label_coordinates(&pts, &geom, cfg.fine_step)?
        }
        _ => {
            return Err(CgError::Config(
                "pipeline needs --labels or --points with --geometry".into(),
            ))
        }
    };

    // 50/50 train-test split.
    let half = traj.labels.len() / 2;
    let train = LabeledTrajectory::new(traj.labels[..half].to_vec(), cfg.fine_step, traj.n_states)?;
    let test = LabeledTrajectory::new(traj.labels[half..].to_vec(), cfg.fine_step, traj.n_states)?;
    let decorr = cfg.decorrelation(traj.n_states)?;
    let train_jp = build_jump_process(&train, &decorr)?;
    let test_jp = build_jump_process(&test, &decorr)?;

    let train_series = estimate_transitions(&train_jp, cfg.t_max)?;
    let train_jd = estimate_jump_distribution(&train_jp, cfg.t_trunc())?;
    let reference = estimate_jump_distribution(&test_jp, cfg.t_trunc())?;

    std::fs::create_dir_all(&args.out_dir)?;
    reference.write_json(args.out_dir.join("reference_jumps.json"))?;
    train_series.write_json(args.out_dir.join("train_transitions.json"))?;

    let default_counts =
        vec![mrpcg::grid::positive_steps_of(cfg.t_mem, cfg.tau, "t_mem")? as usize];
    let kernel_counts = args.kernel_counts.unwrap_or(default_counts);
    let invert_opts = InvertOptions {
        clamp_tol: args.clamp_tol,
        diag_tol: args.diag_tol,
        row_sum_tol: args.row_sum_tol,
        ..Default::default()
    };

    let mut runs = Vec::new();
    for &m in &kernel_counts {
        let mut fit_cfg = FitConfig::new(m as f64 * cfg.tau, cfg.t_max);
        fit_cfg.lambda = cfg.lambda;
        let ks = fit_kernels_from_series(&train_series, &fit_cfg)?;
        let diag = ks.diagnostics.clone().expect("fit carries diagnostics");
        if diag.min_norm_fallback {
            warnings.push(format!(
                "{m} kernels: Gram factorization fell back to minimum-norm"
            ));
        }
        ks.write_json(args.out_dir.join(format!("kernels_{m}.json")))?;

        let (inferred, infer_diag) = infer_transitions(&ks, cfg.t_max)?;
        let (est_jd, invert_report) = renewal_invert_opts(&inferred, &invert_opts)?;
        est_jd.write_json(args.out_dir.join(format!("estimate_jumps_{m}.json")))?;
        let cvm = cvm_error(&reference, &est_jd)?;

        runs.push(KernelRun {
            n_kernels: m,
            t_mem: m as f64 * cfg.tau,
            lambda: ks.lambda,
            loss: diag.loss,
            gram_condition: diag.gram_condition,
            min_norm_fallback: diag.min_norm_fallback,
            excluded_lags: diag.excluded_lags,
            infer_max_row_sum_dev: infer_diag
                .max_row_sum_dev
                .iter()
                .copied()
                .fold(0.0, f64::max),
            infer_most_negative: infer_diag.most_negative.iter().copied().fold(0.0, f64::min),
            invert_max_diag_discrepancy: invert_report.max_diag_discrepancy,
            invert_clamped_entries: invert_report.clamped_entries,
            invert_clamped_mass: invert_report.clamped_mass,
            invert_stopped_lag: invert_report.stopped_lag,
            cvm_error: cvm.total,
            cvm_skipped: cvm.skipped.clone(),
        });
        println!("{m} kernels: cvm error {:.6e}", cvm.total);
    }

    let mut csv = std::io::BufWriter::new(std::fs::File::create(
        args.out_dir.join("error_vs_kernels.csv"),
    )?);
    writeln!(csv, "n_kernels,t_mem,cvm_error")?;
    for r in &runs {
        writeln!(csv, "{},{},{}", r.n_kernels, r.t_mem, r.cvm_error)?;
    }
    drop(csv);

    let summary = PipelineSummary {
        tau: cfg.tau,
        t_max: cfg.t_max,
        t_trunc: cfg.t_trunc(),
        n_states: traj.n_states,
        train: split_report(
            &train_jp,
            train.len(),
            train_jd.tail.clone(),
            train_jd.censored.clone(),
            train_jd.samples.clone(),
        ),
        test: split_report(
            &test_jp,
            test.len(),
            reference.tail.clone(),
            reference.censored.clone(),
            reference.samples.clone(),
        ),
        warnings,
        runs,
    };
    let f = std::io::BufWriter::new(std::fs::File::create(args.out_dir.join("summary.json"))?);
    serde_json::to_writer_pretty(f, &summary)?;
    println!("pipeline artifacts in {}", args.out_dir.display());
    Ok(())
}
