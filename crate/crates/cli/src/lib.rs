//! Drivers behind the `paradiag` binary: windowed runs, α × Nt sweeps,
//! the ψ diagnostic and performance predictions.

pub mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use paradiag::aaos::{bcast_final_step, write_checkpoint, AllAtOnceForm, Timeseries};
use paradiag::circulant::{psi_ratios, CirculantEigenvalues};
use paradiag::perfmodel::{predict, PerfEstimate, PerfInputs};
use paradiag::problems::{run_serial, StepOptions};
use paradiag::solvers::{newton_solve, SolveReport, Timings};
use serde::{Deserialize, Serialize};

pub use config::RunConfig;
use config::InitialGuess;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failed in window {window}: {source}")]
    Solve {
        window: usize,
        #[source]
        source: paradiag::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Errors raised while building problems or forms are configuration errors;
/// solver failures are wrapped explicitly with their window.
impl From<paradiag::Error> for CliError {
    fn from(e: paradiag::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    /// 2 for configuration problems, 3 for solver failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solve { .. } => 3,
            _ => 1,
        }
    }
}

/// One row of the run CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window: usize,
    pub m_p: usize,
    pub eta_mean: f64,
    pub k_p_max: usize,
    pub t_total: f64,
    pub t_blocks: f64,
    pub t_transpose: f64,
}

/// One JSON line of the per-window report stream.
#[derive(Debug, Clone, Serialize)]
pub struct WindowRecord<'a> {
    pub window: usize,
    pub t_start: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub report: &'a SolveReport,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<WindowRow>,
    pub reports: Vec<SolveReport>,
    /// Every step of every window, concatenated.
    pub trajectory: Vec<f64>,
    pub final_state: Vec<f64>,
}

fn resolve(out_dir: Option<&Path>, path: &Option<PathBuf>) -> Option<PathBuf> {
    match (out_dir, path) {
        (Some(dir), Some(p)) if p.is_relative() => Some(dir.join(p)),
        (_, Some(p)) => Some(p.clone()),
        (Some(dir), None) => Some(dir.to_path_buf()),
        (None, None) => None,
    }
}

fn create(path: &Path) -> Result<File, CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(File::create(path)?)
}

fn eta_mean(report: &SolveReport) -> f64 {
    report.eta_mean().unwrap_or(0.0)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build a pool of {threads} threads: {e}")))
}

/// Runs `nwindows` consecutive windows, each started from the final step
/// of the previous one.
///
/// Output paths in the config are taken relative to `out_dir`; without a
/// configured path and with an `out_dir`, `run.csv` and `reports.jsonl`
/// are written there. Rows already written stay on disk if a later window
/// fails.
pub fn run(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let scheme = cfg.scheme()?;
    let opts = cfg.solver.to_options();
    let out = &cfg.output;
    let csv_path = resolve(out_dir, &out.csv_path).map(|p| if out.csv_path.is_none() { p.join("run.csv") } else { p });
    let json_path = resolve(out_dir, &out.json_path).map(|p| if out.json_path.is_none() { p.join("reports.jsonl") } else { p });
    let ckpt_dir = out.checkpoint_dir.as_ref().map(|d| match out_dir {
        Some(dir) if d.is_relative() => dir.join(d),
        _ => d.clone(),
    });
    let mut csv_out = csv_path.as_deref().map(create).transpose()?.map(csv::Writer::from_writer);
    let mut json_out = json_path.as_deref().map(create).transpose()?.map(BufWriter::new);

    let pool = thread_pool(cfg.threads)?;
    let nt = cfg.window.nt;
    let mut u_prev = cfg.initial_state();
    let mut outcome = RunOutcome {
        rows: Vec::new(),
        reports: Vec::new(),
        trajectory: Vec::with_capacity(cfg.total_steps() * u_prev.len()),
        final_state: Vec::new(),
    };
    for w in 0..cfg.window.nwindows {
        let t0 = (w * nt) as f64 * scheme.dt;
        let form = AllAtOnceForm::new(problem.as_ref(), scheme, nt, t0).map_err(|e| CliError::Config(e.to_string()))?;
        let guess = match cfg.window.initial_guess {
            InitialGuess::Constant => Timeseries::constant(u_prev.clone(), nt, t0),
            InitialGuess::Zero => Timeseries::zeros(u_prev.clone(), nt, t0),
        }
        .and_then(|g| match &cfg.window.partition {
            Some(p) => g.with_partition(p.clone()),
            None => Ok(g),
        })
        .map_err(|e| CliError::Config(e.to_string()))?;

        let (sol, mut report) = pool
            .install(|| newton_solve(&form, &guess, &opts))
            .map_err(|source| CliError::Solve { window: w, source })?;
        if !out.record_timings {
            report.timings = Timings::default();
        }
        let row = WindowRow {
            window: w,
            m_p: report.m_p,
            eta_mean: eta_mean(&report),
            k_p_max: report.k_p_max,
            t_total: report.timings.total,
            t_blocks: report.timings.blocks,
            t_transpose: report.timings.transpose,
        };
        if let Some(wr) = csv_out.as_mut() {
            wr.serialize(&row)?;
            wr.flush()?;
        }
        if let Some(js) = json_out.as_mut() {
            let rec = WindowRecord {
                window: w,
                t_start: t0,
                seed: cfg.seed,
                report: &report,
            };
            serde_json::to_writer(&mut *js, &rec)?;
            js.write_all(b"\n")?;
            js.flush()?;
        }
        u_prev = bcast_final_step(&sol);
        if let Some(dir) = &ckpt_dir {
            write_checkpoint(dir, w, t0 + nt as f64 * scheme.dt, &u_prev)?;
        }
        log::info!("window {w}: m_p = {}, eta_mean = {:.3e}", row.m_p, row.eta_mean);
        outcome.trajectory.extend_from_slice(sol.steps());
        outcome.rows.push(row);
        outcome.reports.push(report);
    }
    outcome.final_state = u_prev;
    Ok(outcome)
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub nt: usize,
    pub m_p: usize,
    pub eta_mean: f64,
    /// `eta_mean / (α / (1 - α))`.
    pub eta_ratio: f64,
    pub t_parallel: f64,
    pub t_serial: f64,
    pub speedup: f64,
}

/// Solves a single window for every `(α, nt)` pair, alphas outermost.
///
/// Each finished row is flushed to `out` before the next pair starts, so a
/// failure leaves the completed rows behind.
pub fn sweep(
    base: &RunConfig,
    alphas: &[f64],
    nts: &[usize],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>, CliError> {
    if alphas.is_empty() || nts.is_empty() {
        return Err(CliError::Config("sweep needs at least one alpha and one nt".into()));
    }
    for &a in alphas {
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::Config(format!("sweep alpha must lie in (0, 1), got {a}")));
        }
    }
    if nts.contains(&0) {
        return Err(CliError::Config("sweep nt must be at least 1".into()));
    }
    base.validate()?;
    let mut writer = out.map(create).transpose()?.map(csv::Writer::from_writer);
    let pool = thread_pool(base.threads)?;
    let problem = base.build_problem()?;
    let scheme = base.scheme()?;
    let u0 = base.initial_state();
    let mut rows = Vec::new();
    let mut index = 0;
    for &alpha in alphas {
        for &nt in nts {
            let mut cfg = base.clone();
            cfg.solver.alpha = alpha;
            cfg.window.nt = nt;
            cfg.window.nwindows = 1;
            cfg.window.partition = None;
            let opts = cfg.solver.to_options();
            let form = AllAtOnceForm::new(problem.as_ref(), scheme, nt, 0.0).map_err(|e| CliError::Config(e.to_string()))?;
            let guess = match cfg.window.initial_guess {
                InitialGuess::Constant => Timeseries::constant(u0.clone(), nt, 0.0),
                InitialGuess::Zero => Timeseries::zeros(u0.clone(), nt, 0.0),
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            let start = Instant::now();
            let (_, report) = pool
                .install(|| newton_solve(&form, &guess, &opts))
                .map_err(|source| CliError::Solve { window: index, source })?;
            let t_parallel = start.elapsed().as_secs_f64();
            let start = Instant::now();
            run_serial(problem.as_ref(), &scheme, &u0, 0.0, nt, &StepOptions::default())
                .map_err(|source| CliError::Solve { window: index, source })?;
            let t_serial = start.elapsed().as_secs_f64();
            let eta = eta_mean(&report);
            let (t_parallel, t_serial) = if base.output.record_timings { (t_parallel, t_serial) } else { (0.0, 0.0) };
            let row = SweepRow {
                alpha,
                nt,
                m_p: report.m_p,
                eta_mean: eta,
                eta_ratio: eta / (alpha / (1.0 - alpha)),
                t_parallel,
                t_serial,
                speedup: if t_parallel > 0.0 { t_serial / t_parallel } else { 0.0 },
            };
            if let Some(wr) = writer.as_mut() {
                wr.serialize(&row)?;
                wr.flush()?;
            }
            rows.push(row);
            index += 1;
        }
    }
    Ok(rows)
}

/// One row of the ψ CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiRow {
    pub k: usize,
    pub re_lambda1: f64,
    pub im_lambda1: f64,
    pub re_lambda2: f64,
    pub im_lambda2: f64,
    pub re_psi: f64,
    pub im_psi: f64,
}

pub fn psi_table(nt: usize, dt: f64, theta: f64, alpha: f64) -> Result<Vec<PsiRow>, CliError> {
    let eigs = CirculantEigenvalues::compute(nt, dt, theta, alpha).map_err(|e| CliError::Config(e.to_string()))?;
    let psi = psi_ratios(&eigs).map_err(|source| CliError::Solve { window: 0, source })?;
    Ok((0..nt)
        .map(|k| PsiRow {
            k,
            re_lambda1: eigs.lambda1[k].re,
            im_lambda1: eigs.lambda1[k].im,
            re_lambda2: eigs.lambda2[k].re,
            im_lambda2: eigs.lambda2[k].im,
            re_psi: psi[k].re,
            im_psi: psi[k].im,
        })
        .collect())
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), CliError> {
    let mut wr = csv::Writer::from_writer(out);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn predict_json(inputs: &PerfInputs) -> Result<PerfEstimate, CliError> {
    predict(inputs).map_err(|e| CliError::Config(e.to_string()))
}
