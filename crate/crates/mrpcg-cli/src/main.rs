//! Batch command-line surface for the coarse-graining pipeline.
//!
//! Every subcommand reads and writes the documented CSV/JSON formats and is
//! reproducible: identical inputs and seed give byte-identical artifacts.
//! Exit codes: 0 on success, 1 on validation or usage errors, 2 when a
//! numerical consistency diagnostic fails (e.g. renewal inversion detecting
//! non-renewal input).

mod config;
mod pipeline;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrpcg::estimate::{
    estimate_jump_distribution_opts, estimate_transitions_opts, mean_holding_times,
    EstimateOptions, JumpDistribution, TransitionSeries, DEFAULT_TAIL_THRESHOLD,
};
use mrpcg::exact::{
    build_augmented_chain, compute_all_qsds, convergence_study, exact_jump_distribution,
    exact_transitions, operator_kernels, ProjectorMatrix,
};
use mrpcg::grid::steps_of;
use mrpcg::jump::{build_jump_process, JumpProcess};
use mrpcg::kernel::{fit_kernels_from_series, infer_transitions, FitConfig, KernelSeries};
use mrpcg::metrics::{cvm_error_opts, markov_baseline, CvmOptions};
use mrpcg::renewal::{renewal_invert_opts, InvertOptions};
use mrpcg::sim::{expand_to_grid, simulate_mrp};
use mrpcg::traj::{
    label_coordinates, read_points_csv, sample_finite_chain, sample_langevin, write_points_csv,
    FiniteChainSpec, LabeledTrajectory, LangevinParams, MacrostateGeometry,
};
use mrpcg::{CgError, Result};

use config::{validate_config, RunConfig};

#[derive(Parser)]
#[command(
    name = "mrpcg",
    version,
    about = "Coarse-grain trajectories into Markov renewal processes"
)]
struct Cli {
    /// JSON config file with run defaults (falls back to $MRPCG_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

/// Flags overriding the config file per run.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, help = "Fine sampling interval")]
    fine_step: Option<f64>,
    #[arg(long, help = "Macroscopic step")]
    tau: Option<f64>,
    #[arg(long, value_delimiter = ',', help = "Per-state decorrelation times")]
    tau_states: Option<Vec<f64>>,
    #[arg(long, help = "Data cutoff for transition matrices")]
    t_max: Option<f64>,
    #[arg(long, help = "Kernel cutoff")]
    t_mem: Option<f64>,
    #[arg(long, help = "Ridge coefficient")]
    lambda: Option<f64>,
    #[arg(long, help = "Jump-distribution truncation")]
    t_trunc: Option<f64>,
    #[arg(long, help = "Inference/simulation horizon")]
    horizon: Option<f64>,
    #[arg(long, help = "RNG seed")]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        if let Some(v) = self.fine_step {
            cfg.fine_step = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if self.tau_states.is_some() {
            cfg.tau_states = self.tau_states.clone();
        }
        if let Some(v) = self.t_max {
            cfg.t_max = v;
        }
        if let Some(v) = self.t_mem {
            cfg.t_mem = v;
        }
        if self.lambda.is_some() {
            cfg.lambda = self.lambda;
        }
        if self.t_trunc.is_some() {
            cfg.t_trunc = self.t_trunc;
        }
        if self.horizon.is_some() {
            cfg.horizon = self.horizon;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample the four-well Langevin test system to a points CSV.
    GenLangevin {
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0.3)]
        coupling: f64,
        #[arg(long, default_value_t = 3.0)]
        beta: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        start_x: f64,
        #[arg(long, default_value_t = 1.0)]
        start_y: f64,
        #[arg(long, default_value_t = 10.0)]
        bound: f64,
        #[arg(long)]
        zero_noise: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sample a finite-chain trajectory to a labels CSV.
    GenChain {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0, help = "Start microstate (0-based)")]
        start: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Label 2D points against a rectangle geometry.
    Label {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Build the jump process from a labels CSV.
    BuildJump {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, help = "State count when larger than the largest label seen")]
        n_states: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, help = "Sidecar JSON path (default: out with .json extension)")]
        sidecar: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Estimate transition matrices and the jump distribution by counts.
    Estimate {
        #[arg(long)]
        jump: PathBuf,
        #[arg(long, help = "Sidecar JSON path (default: jump with .json extension)")]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        transitions_out: PathBuf,
        #[arg(long)]
        jumps_out: PathBuf,
        #[arg(long, help = "Drop the first defined time from the entry list")]
        exclude_first_entry: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit memory kernels from a transition series.
    Fit {
        #[arg(long)]
        transitions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Extrapolate transition matrices through the kernel recursion.
    Infer {
        #[arg(long)]
        kernels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recover the jump distribution from a transition series.
    Invert {
        #[arg(long)]
        transitions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, help = "Diagnostics JSON path")]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        clamp_tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        diag_tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        row_sum_tol: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Simulate the renewal process defined by a jump distribution.
    Simulate {
        #[arg(long)]
        jumps: PathBuf,
        #[arg(long, help = "Start macrostate (1-based)")]
        start: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, help = "Sidecar JSON path (default: out with .json extension)")]
        sidecar: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Cramer-von Mises error between two jump distributions.
    Error {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, help = "Normalize the estimate by the reference mass")]
        shared_z: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Single-matrix Markov baseline extended by matrix powers.
    Baseline {
        #[arg(long)]
        jump: PathBuf,
        #[arg(long, help = "Sidecar JSON path (default: jump with .json extension)")]
        sidecar: Option<PathBuf>,
        #[arg(long, help = "Count lag (default: tau)")]
        lag: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Exact transition matrices, jump distribution, kernels, and QSDs of a
    /// finite chain.
    Oracle {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, help = "Number of lags (default: horizon / tau)")]
        n_max: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Renewal-convergence study over decorrelation counts.
    Convergence {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        q_values: Vec<u64>,
        #[arg(long, default_value_t = 20)]
        n_max: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, help = "Also write an error-vs-q CSV table")]
        csv: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Full pipeline: split, build jump processes, estimate, fit, infer,
    /// invert, and score against the held-out half.
    Pipeline(pipeline::PipelineArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CgError::Diagnostic(msg)) => {
            eprintln!("error: consistency diagnostic failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    if let Some(p) = path {
        check_input(p)?;
        return RunConfig::load(p);
    }
    if let Ok(p) = std::env::var("MRPCG_CONFIG") {
        if !p.is_empty() {
            return RunConfig::load(&p);
        }
    }
    Ok(RunConfig::default())
}

fn check_input(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CgError::InvalidInput(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn default_sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn read_jump(jump: &Path, sidecar: &Option<PathBuf>) -> Result<JumpProcess> {
    let sidecar = sidecar.clone().unwrap_or_else(|| default_sidecar(jump));
    check_input(jump)?;
    check_input(&sidecar)?;
    JumpProcess::read_csv(jump, &sidecar)
}

fn validated(cfg: RunConfig) -> Result<RunConfig> {
    for w in validate_config(&cfg)? {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let base = load_config(&cli.config)?;
    match cli.command {
        Command::GenLangevin {
            steps,
            coupling,
            beta,
            dt,
            start_x,
            start_y,
            bound,
            zero_noise,
            out,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            let params = LangevinParams {
                coupling,
                beta,
                dt,
                start: (start_x, start_y),
                bound,
                zero_noise,
            };
            let points = sample_langevin(&params, steps, cfg.seed)?;
            write_points_csv(&points, &out)?;
            println!("wrote {} points to {}", points.len(), out.display());
            Ok(())
        }
        Command::GenChain {
            chain,
            steps,
            start,
            out,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            check_input(&chain)?;
            let spec = FiniteChainSpec::read_json(&chain)?;
            let traj = sample_finite_chain(&spec, steps, start, cfg.seed)?;
            traj.write_csv(&out)?;
            println!("wrote {} labels to {}", traj.len(), out.display());
            Ok(())
        }
        Command::Label {
            points,
            geometry,
            out,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            check_input(&points)?;
            check_input(&geometry)?;
            let pts = read_points_csv(&points)?;
            let geom = MacrostateGeometry::read_json(&geometry)?;
            let traj = label_coordinates(&pts, &geom, cfg.fine_step)?;
            traj.write_csv(&out)?;
            println!(
                "labeled {} points into {} states",
                traj.len(),
                traj.n_states
            );
            Ok(())
        }
        Command::BuildJump {
            labels,
            n_states,
            out,
            sidecar,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            check_input(&labels)?;
            let traj = LabeledTrajectory::read_csv(&labels, cfg.fine_step, n_states)?;
            let decorr = cfg.decorrelation(traj.n_states)?;
            let jp = build_jump_process(&traj, &decorr)?;
            let sidecar = sidecar.unwrap_or_else(|| default_sidecar(&out));
            jp.write_csv(&out, &sidecar)?;
            println!(
                "jump process: {} coarse steps, burn-in {}, {} entries",
                jp.r.len(),
                jp.burn_in,
                jp.entries.len()
            );
            Ok(())
        }
        Command::Estimate {
            jump,
            sidecar,
            transitions_out,
            jumps_out,
            exclude_first_entry,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            let jp = read_jump(&jump, &sidecar)?;
            let opts = EstimateOptions {
                include_first_entry: !exclude_first_entry,
            };
            let ts = estimate_transitions_opts(&jp, cfg.t_max, &opts)?;
            ts.write_json(&transitions_out)?;
            let jd = estimate_jump_distribution_opts(&jp, cfg.t_trunc(), &opts)?;
            jd.write_json(&jumps_out)?;
            println!(
                "estimated {} lags from {} entries",
                ts.n_lags(),
                jp.entries.len()
            );
            match mean_holding_times(&jd, DEFAULT_TAIL_THRESHOLD) {
                Ok(holding) => {
                    for (state, t) in holding {
                        println!("mean holding time in state {state}: {t}");
                    }
                }
                Err(e) => eprintln!("warning: holding times not reported: {e}"),
            }
            Ok(())
        }
        Command::Fit {
            transitions,
            out,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            check_input(&transitions)?;
            let ts = TransitionSeries::read_json(&transitions)?;
            let mut fit_cfg = FitConfig::new(cfg.t_mem, cfg.t_max);
            fit_cfg.lambda = cfg.lambda;
            let ks = fit_kernels_from_series(&ts, &fit_cfg)?;
            let diag = ks.diagnostics.as_ref().expect("fit carries diagnostics");
            if diag.min_norm_fallback {
                eprintln!("warning: Gram factorization failed; used the minimum-norm solve");
            }
            if diag.excluded_lags > 0 {
                eprintln!(
                    "warning: {} lags lacked samples in some row and were excluded from the fit",
                    diag.excluded_lags
                );
            }
            ks.write_json(&out)?;
            println!(
                "fitted {} kernels (lambda {:.3e}, loss {:.6e})",
                ks.n_mem(),
                ks.lambda,
                diag.loss
            );
            Ok(())
        }
        Command::Infer {
            kernels,
            out,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            check_input(&kernels)?;
            let ks = KernelSeries::read_json(&kernels)?;
            let (ts, diag) = infer_transitions(&ks, cfg.horizon())?;
            ts.write_json(&out)?;
            let worst_dev = diag.max_row_sum_dev.iter().copied().fold(0.0, f64::max);
            let most_neg = diag.most_negative.iter().copied().fold(0.0, f64::min);
            println!(
                "inferred {} lags (max row-sum deviation {worst_dev:.3e}, most negative entry {most_neg:.3e})",
                ts.n_lags()
            );
            Ok(())
        }
        Command::Invert {
            transitions,
            out,
            report,
            clamp_tol,
            diag_tol,
            row_sum_tol,
            overrides,
        } => {
            let _cfg = validated(overrides.apply(base))?;
            check_input(&transitions)?;
            let ts = TransitionSeries::read_json(&transitions)?;
            let opts = InvertOptions {
                clamp_tol,
                diag_tol,
                row_sum_tol,
                ..Default::default()
            };
            let (jd, inv_report) = renewal_invert_opts(&ts, &opts)?;
            jd.write_json(&out)?;
            if let Some(p) = report {
                let f = std::io::BufWriter::new(std::fs::File::create(p)?);
                serde_json::to_writer_pretty(f, &inv_report)?;
            }
            println!(
                "inverted {} lags (max diagonal discrepancy {:.3e}, clamped {} entries)",
                inv_report.stopped_lag, inv_report.max_diag_discrepancy, inv_report.clamped_entries
            );
            Ok(())
        }
        Command::Simulate {
            jumps,
            start,
            out,
            sidecar,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            check_input(&jumps)?;
            let jd = JumpDistribution::read_json(&jumps)?;
            let (mt, warnings) = simulate_mrp(&jd, start, cfg.horizon(), cfg.seed)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let jp = expand_to_grid(&mt)?;
            let sidecar = sidecar.unwrap_or_else(|| default_sidecar(&out));
            jp.write_csv(&out, &sidecar)?;
            println!(
                "simulated {} jumps over {} coarse steps",
                mt.entries.len(),
                mt.horizon
            );
            Ok(())
        }
        Command::Error {
            reference,
            estimate,
            out,
            shared_z,
            overrides,
        } => {
            let _cfg = overrides.apply(base);
            check_input(&reference)?;
            check_input(&estimate)?;
            let p_ref = JumpDistribution::read_json(&reference)?;
            let p_est = JumpDistribution::read_json(&estimate)?;
            let opts = CvmOptions {
                shared_normalization: shared_z,
            };
            let report = cvm_error_opts(&p_ref, &p_est, &opts)?;
            report.write_json(&out)?;
            println!(
                "cvm error {:.6e} ({} pairs skipped)",
                report.total,
                report.skipped.len()
            );
            Ok(())
        }
        Command::Baseline {
            jump,
            sidecar,
            lag,
            out,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            let jp = read_jump(&jump, &sidecar)?;
            let lag = lag.unwrap_or(cfg.tau);
            let ts = markov_baseline(&jp, lag, cfg.horizon())?;
            ts.write_json(&out)?;
            println!("baseline at lag {lag}: {} powers", ts.n_lags());
            Ok(())
        }
        Command::Oracle {
            chain,
            n_max,
            out_dir,
            overrides,
        } => {
            let cfg = validated(overrides.apply(base))?;
            check_input(&chain)?;
            let spec = FiniteChainSpec::read_json(&chain)?;
            let decorr = cfg.decorrelation(spec.n_states())?;
            let n_max = match n_max {
                Some(n) => n,
                None => steps_of(cfg.horizon(), cfg.tau, "horizon")? as usize,
            };
            std::fs::create_dir_all(&out_dir)?;
            let qsds = compute_all_qsds(&spec)?;
            let ac = build_augmented_chain(&spec, &decorr)?;
            let proj = ProjectorMatrix::new(&ac, &qsds)?;
            let ts = exact_transitions(&ac, &qsds, n_max)?;
            ts.write_json(out_dir.join("transitions.json"))?;
            let jd = exact_jump_distribution(&ac, &qsds, n_max as f64 * cfg.tau)?;
            jd.write_json(out_dir.join("jumps.json"))?;
            let ks = operator_kernels(&ac, &proj, n_max)?;
            ks.write_json(out_dir.join("kernels.json"))?;
            let f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("qsd.json"))?);
            serde_json::to_writer_pretty(f, &qsds)?;
            println!(
                "oracle over {} augmented states: {} lags written to {}",
                ac.n_aug(),
                n_max,
                out_dir.display()
            );
            Ok(())
        }
        Command::Convergence {
            chain,
            q_values,
            n_max,
            out,
            csv,
            overrides,
        } => {
            let _cfg = validated(overrides.apply(base))?;
            check_input(&chain)?;
            let spec = FiniteChainSpec::read_json(&chain)?;
            let report = convergence_study(&spec, &q_values, n_max)?;
            let f = std::io::BufWriter::new(std::fs::File::create(&out)?);
            serde_json::to_writer_pretty(f, &report)?;
            if let Some(p) = csv {
                let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
                writeln!(w, "q,error")?;
                for (q, e) in report.q_values.iter().zip(&report.errors) {
                    writeln!(w, "{q},{e}")?;
                }
            }
            println!(
                "errors {:?}, fitted rate {:?}, spectral delta {:?}",
                report.errors, report.fitted_rate, report.spectral_delta
            );
            Ok(())
        }
        Command::Pipeline(args) => pipeline::run(args, base),
    }
}
