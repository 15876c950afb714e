//! Outer solvers for the all-at-once system.
//!
//! [`richardson_solve`] and [`gmres_solve`] work on any operator pair given
//! as closures. [`newton_solve`] drives a whole window: it evaluates the
//! all-at-once residual, builds the circulant preconditioner around the
//! reference state of the current iterate, and runs one of the linear
//! solvers on each Newton correction.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aaos::{AllAtOnceForm, Linearisation, Timeseries};
use crate::circulant::{BlockStats, CirculantPreconditioner, ReferenceState};
use crate::error::{Error, Result};
use crate::numerics::krylov::{gmres, GmresParams};
use crate::numerics::{axpy, norm2, BlockMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMethod {
    #[default]
    Richardson,
    Gmres,
    Fgmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Forcing {
    /// Every Newton correction solved to relative tolerance `tol`.
    Fixed { tol: f64 },
    /// Eisenstat–Walker choice 1.
    #[default]
    EisenstatWalker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Newton corrections solve with the exact all-at-once Jacobian.
    #[default]
    Exact,
    /// The Jacobian is replaced by the preconditioner: one `P⁻¹` per correction.
    PreconditionerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualScaling {
    #[default]
    None,
    /// Absolute tolerance multiplied by `sqrt(nt)`.
    SqrtNt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub outer_method: OuterMethod,
    pub rtol: f64,
    pub atol: f64,
    /// Cap on outer Krylov iterations of each linear solve.
    pub max_outer: usize,
    pub newton_max: usize,
    pub forcing: Forcing,
    pub jacobian_mode: JacobianMode,
    pub residual_scaling: ResidualScaling,
    pub restart: usize,
    /// Richardson update `x += damping * P⁻¹ r`.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            outer_method: OuterMethod::Richardson,
            rtol: 1e-11,
            atol: 0.0,
            max_outer: 200,
            newton_max: 30,
            forcing: Forcing::EisenstatWalker,
            jacobian_mode: JacobianMode::Exact,
            residual_scaling: ResidualScaling::None,
            restart: 30,
            damping: 1.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return bad("rtol must lie in (0, 1)");
        }
        if !(self.atol >= 0.0) {
            return bad("atol must be nonnegative");
        }
        if self.max_outer == 0 || self.newton_max == 0 || self.restart == 0 {
            return bad("max_outer, newton_max and restart must be positive");
        }
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return bad("damping must be positive");
        }
        if let Forcing::Fixed { tol } = self.forcing {
            if !(tol > 0.0 && tol < 1.0) {
                return bad("fixed forcing tolerance must lie in (0, 1)");
            }
        }
        Ok(())
    }

    fn absolute_tolerance(&self, nt: usize) -> f64 {
        match self.residual_scaling {
            ResidualScaling::None => self.atol,
            ResidualScaling::SqrtNt => self.atol * (nt as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total: f64,
    pub blocks: f64,
    pub transpose: f64,
    pub fft: f64,
    pub residual: f64,
    pub jac: f64,
    /// Building and factorising preconditioner blocks.
    pub setup: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Outer Krylov iterations, summed over Newton corrections.
    pub m_p: usize,
    /// Residual norms, starting with the initial one.
    pub residuals: Vec<f64>,
    /// Contraction rates `residuals[i] / residuals[i - 1]`.
    pub eta: Vec<f64>,
    pub k_p_max: usize,
    pub k_p_min: usize,
    /// Largest Krylov count seen by each frequency block.
    pub k_p: Vec<usize>,
    pub newton_its: usize,
    pub timings: Timings,
    pub preconditioner_applications: usize,
    /// Spatial block solves, real or complex.
    pub block_solves: usize,
    pub block_krylov_iterations: usize,
    pub n_steps: usize,
    pub converged: bool,
    pub fingerprint: String,
}

impl SolveReport {
    /// Mean contraction over iterations `2..=m_p`, or the single rate if only one.
    pub fn eta_mean(&self) -> Option<f64> {
        match self.eta.len() {
            0 => None,
            1 => Some(self.eta[0]),
            n => Some(self.eta[1..].iter().sum::<f64>() / (n - 1) as f64),
        }
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }

    fn set_residuals(&mut self, residuals: Vec<f64>) {
        self.eta = residuals
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect();
        self.residuals = residuals;
    }

    fn absorb(&mut self, stats: &BlockStats) {
        if self.k_p.len() < stats.k_p.len() {
            self.k_p.resize(stats.k_p.len(), 0);
        }
        for (acc, &k) in self.k_p.iter_mut().zip(&stats.k_p) {
            *acc = (*acc).max(k);
        }
        self.k_p_max = self.k_p.iter().copied().max().unwrap_or(0);
        self.k_p_min = self.k_p.iter().copied().min().unwrap_or(0);
        self.block_solves += stats.k_p.len();
        self.block_krylov_iterations += stats.k_p.iter().sum::<usize>();
        self.timings.blocks += stats.t_blocks;
        self.timings.transpose += stats.t_transpose;
        self.timings.fft += stats.t_fft;
    }
}

fn subtract(rhs: &[f64], ax: &[f64], out: &mut [f64]) {
    for i in 0..rhs.len() {
        out[i] = rhs[i] - ax[i];
    }
}

/// Preconditioned Richardson, `x ← x + damping · P⁻¹(b - A x)`, stopped on
/// the unpreconditioned residual `‖b - A x‖₂ ≤ max(atol, rtol ‖r₀‖)`.
///
/// `m_p` counts preconditioner applications; no extra application is spent
/// on the initial residual.
pub fn richardson_solve<A, P>(
    mut apply_a: A,
    mut apply_pinv: P,
    rhs: &[f64],
    x0: &Timeseries,
    opts: &SolverOptions,
) -> Result<(Timeseries, SolveReport)>
where
    A: FnMut(&[f64], &mut [f64]) -> Result<()>,
    P: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    opts.validate()?;
    let n = rhs.len();
    let mut x = x0.clone();
    let mut ax = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    apply_a(x.steps(), &mut ax)?;
    subtract(rhs, &ax, &mut r);
    let mut history = vec![norm2(&r)];
    let target = opts.absolute_tolerance(x.nt()).max(opts.rtol * history[0]);
    let mut its = 0;
    while *history.last().expect("nonempty") > target {
        let res = *history.last().expect("nonempty");
        if its >= opts.max_outer || !res.is_finite() {
            return Err(Error::MaxIterations {
                iterations: its,
                residual: res,
                history,
            });
        }
        apply_pinv(&r, &mut z)?;
        axpy(opts.damping, &z, x.steps_mut());
        apply_a(x.steps(), &mut ax)?;
        subtract(rhs, &ax, &mut r);
        history.push(norm2(&r));
        its += 1;
    }
    let mut report = SolveReport {
        m_p: its,
        preconditioner_applications: its,
        n_steps: x.nt(),
        converged: true,
        ..Default::default()
    };
    report.set_residuals(history);
    Ok((x, report))
}

/// Right-preconditioned restarted GMRES, or FGMRES when `flexible`.
pub fn gmres_solve<A, P>(
    apply_a: A,
    apply_pinv: P,
    rhs: &[f64],
    x0: &Timeseries,
    opts: &SolverOptions,
    flexible: bool,
) -> Result<(Timeseries, SolveReport)>
where
    A: FnMut(&[f64], &mut [f64]) -> Result<()>,
    P: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    opts.validate()?;
    let mut x = x0.clone();
    let params = GmresParams {
        rtol: opts.rtol,
        atol: opts.absolute_tolerance(x.nt()),
        max_iters: opts.max_outer,
        restart: opts.restart,
        flexible,
        fixed_iterations: false,
    };
    let out = gmres(apply_a, apply_pinv, rhs, x.steps_mut(), &params)?;
    if !out.converged {
        if out.breakdown {
            return Err(Error::Breakdown {
                iterations: out.iterations,
            });
        }
        return Err(Error::MaxIterations {
            iterations: out.iterations,
            residual: out.final_residual,
            history: out.residual_history,
        });
    }
    let mut report = SolveReport {
        m_p: out.iterations,
        preconditioner_applications: out.preconditioner_applications,
        n_steps: x.nt(),
        converged: true,
        ..Default::default()
    };
    report.set_residuals(out.residual_history);
    Ok((x, report))
}

/// Everything needed to solve one window with the circulant preconditioner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParadiagOptions {
    pub solver: SolverOptions,
    pub alpha: f64,
    pub reference: ReferenceState,
    pub block: BlockMethod,
    /// States the exact Jacobian is linearised at.
    pub linearisation: Linearisation,
}

impl Default for ParadiagOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            alpha: 1e-4,
            reference: ReferenceState::default(),
            block: BlockMethod::DenseLu,
            linearisation: Linearisation::Current,
        }
    }
}

/// Golden ratio, the Eisenstat–Walker safeguard exponent.
const EW_EXPONENT: f64 = 1.618_033_988_749_895;
const EW_INITIAL: f64 = 0.1;
const EW_FLOOR: f64 = 1e-8;
const EW_CEILING: f64 = 0.9;
/// Consecutive residual increases tolerated before declaring divergence.
const MAX_INCREASES: usize = 3;

/// Eisenstat–Walker choice 1 with the usual safeguard.
fn eisenstat_walker(prev_eta: f64, res_new: f64, res_old: f64, lin_res: f64) -> f64 {
    let mut eta = (res_new - lin_res).abs() / res_old;
    let guard = prev_eta.powf(EW_EXPONENT);
    if guard > 0.1 {
        eta = eta.max(guard);
    }
    eta.clamp(EW_FLOOR, EW_CEILING)
}

struct LinearStep {
    correction: Vec<f64>,
    iterations: usize,
    pc_applications: usize,
    /// `‖rhs - J δ‖` at exit.
    residual: f64,
}

/// Solves `J δ = rhs` from `δ = 0` with the configured outer method.
fn linear_correction(
    form: &AllAtOnceForm<'_>,
    jac: &crate::aaos::AllAtOnceJacobian<'_>,
    pc: &CirculantPreconditioner,
    rhs: &[f64],
    u0: &[f64],
    rtol: f64,
    atol: f64,
    opts: &SolverOptions,
    report: &mut SolveReport,
) -> Result<LinearStep> {
    let zero = Timeseries::zeros(u0.to_vec(), form.nt, form.t0)?;
    let inner = SolverOptions {
        rtol,
        atol,
        residual_scaling: ResidualScaling::None,
        ..*opts
    };
    let mut t_jac = 0.0;
    let mut stats = Vec::new();
    let apply_a = |v: &[f64], out: &mut [f64]| {
        let t = Instant::now();
        jac.apply_into(v, out);
        t_jac += t.elapsed().as_secs_f64();
        Ok(())
    };
    let apply_p = |v: &[f64], out: &mut [f64]| {
        let (z, s) = pc.apply(v)?;
        out.copy_from_slice(&z);
        stats.push(s);
        Ok(())
    };
    let (x, rep) = match opts.outer_method {
        OuterMethod::Richardson => richardson_solve(apply_a, apply_p, rhs, &zero, &inner)?,
        OuterMethod::Gmres => gmres_solve(apply_a, apply_p, rhs, &zero, &inner, false)?,
        OuterMethod::Fgmres => gmres_solve(apply_a, apply_p, rhs, &zero, &inner, true)?,
    };
    report.timings.jac += t_jac;
    for s in &stats {
        report.absorb(s);
    }
    Ok(LinearStep {
        correction: x.into_steps(),
        iterations: rep.m_p,
        pc_applications: rep.preconditioner_applications,
        residual: rep.final_residual().unwrap_or(0.0),
    })
}

/// Solves the all-at-once system of `form` starting from `guess`.
///
/// Linear problems with the exact Jacobian take a single Newton step whose
/// linear solve runs to the outer tolerance; the report then carries that
/// solve's residual history. Nonlinear problems record one residual per
/// Newton iteration and accumulate the inner Krylov counts in `m_p`.
pub fn newton_solve(
    form: &AllAtOnceForm<'_>,
    guess: &Timeseries,
    opts: &ParadiagOptions,
) -> Result<(Timeseries, SolveReport)> {
    let start = Instant::now();
    opts.solver.validate()?;
    let p = form.problem;
    let u0 = guess.initial_condition().to_vec();
    let mut report = SolveReport {
        n_steps: form.nt,
        fingerprint: p.info().fingerprint(&form.scheme),
        ..Default::default()
    };

    if p.is_linear() && opts.solver.jacobian_mode == JacobianMode::Exact {
        let t = Instant::now();
        let jac = form.jacobian(guess, &Linearisation::Current)?;
        let k = p.jacobian(&u0, form.t0);
        let pc = CirculantPreconditioner::new(form, opts.alpha, &k, opts.block)?;
        report.timings.setup += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let b = form.linear_rhs(&u0)?;
        report.timings.residual += t.elapsed().as_secs_f64();

        let mut t_jac = 0.0;
        let mut stats = Vec::new();
        let apply_a = |v: &[f64], out: &mut [f64]| {
            let t = Instant::now();
            jac.apply_into(v, out);
            t_jac += t.elapsed().as_secs_f64();
            Ok(())
        };
        let apply_p = |v: &[f64], out: &mut [f64]| {
            let (z, s) = pc.apply(v)?;
            out.copy_from_slice(&z);
            stats.push(s);
            Ok(())
        };
        let s = &opts.solver;
        let (x, rep) = match s.outer_method {
            OuterMethod::Richardson => richardson_solve(apply_a, apply_p, &b, guess, s)?,
            OuterMethod::Gmres => gmres_solve(apply_a, apply_p, &b, guess, s, false)?,
            OuterMethod::Fgmres => gmres_solve(apply_a, apply_p, &b, guess, s, true)?,
        };
        report.timings.jac += t_jac;
        for st in &stats {
            report.absorb(st);
        }
        report.m_p = rep.m_p;
        report.preconditioner_applications = rep.preconditioner_applications;
        report.set_residuals(rep.residuals);
        report.newton_its = 1;
        report.converged = true;
        report.timings.total = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }

    let mut x = guess.clone();
    let t = Instant::now();
    let mut r = form.residual(&x)?;
    report.timings.residual += t.elapsed().as_secs_f64();
    let mut res = norm2(&r);
    let target = opts.solver.absolute_tolerance(form.nt).max(opts.solver.rtol * res);
    let mut history = vec![res];
    let mut forcing = match opts.solver.forcing {
        Forcing::Fixed { tol } => tol,
        Forcing::EisenstatWalker => EW_INITIAL,
    };
    let mut increases = 0;

    while res > target {
        if report.newton_its >= opts.solver.newton_max || !res.is_finite() {
            return Err(Error::NewtonDiverged {
                step: None,
                iterations: report.newton_its,
                residual: res,
            });
        }
        let t = Instant::now();
        let pc = CirculantPreconditioner::from_reference(form, &x, &opts.reference, opts.alpha, opts.block)?;
        report.timings.setup += t.elapsed().as_secs_f64();
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();

        let step = match opts.solver.jacobian_mode {
            JacobianMode::Exact => {
                let t = Instant::now();
                let jac = form.jacobian(&x, &opts.linearisation)?;
                report.timings.jac += t.elapsed().as_secs_f64();
                // Never ask the inner solve for more than the outer target needs.
                let atol = 0.5 * target;
                linear_correction(form, &jac, &pc, &rhs, &u0, forcing, atol, &opts.solver, &mut report)?
            }
            JacobianMode::PreconditionerOnly => {
                let (z, s) = pc.apply(&rhs)?;
                report.absorb(&s);
                LinearStep {
                    correction: z,
                    iterations: 1,
                    pc_applications: 1,
                    residual: f64::NAN,
                }
            }
        };
        report.m_p += step.iterations;
        report.preconditioner_applications += step.pc_applications;
        axpy(1.0, &step.correction, x.steps_mut());
        report.newton_its += 1;

        let t = Instant::now();
        r = form.residual(&x)?;
        report.timings.residual += t.elapsed().as_secs_f64();
        let new_res = norm2(&r);
        increases = if new_res > res { increases + 1 } else { 0 };
        if increases >= MAX_INCREASES {
            return Err(Error::NewtonDiverged {
                step: None,
                iterations: report.newton_its,
                residual: new_res,
            });
        }
        if opts.solver.forcing == Forcing::EisenstatWalker && step.residual.is_finite() {
            forcing = eisenstat_walker(forcing, new_res, res, step.residual);
        }
        res = new_res;
        history.push(res);
    }
    report.set_residuals(history);
    report.converged = true;
    report.timings.total = start.elapsed().as_secs_f64();
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{run_serial, BoundaryCondition, Burgers1d, LinearProblem, MassKind, StepOptions, ThetaScheme};

    fn ident(x: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(x);
        Ok(())
    }

    #[test]
    fn identity_system_converges_in_one_iteration() {
        let b = vec![1.0, 2.0, -3.0, 0.5];
        let x0 = Timeseries::zeros(vec![0.0; 2], 2, 0.0).unwrap();
        let (x, rep) = gmres_solve(ident, ident, &b, &x0, &SolverOptions::default(), false).unwrap();
        assert_eq!(rep.m_p, 1);
        assert_eq!(x.steps(), &b[..]);
        let (x, rep) = richardson_solve(ident, ident, &b, &x0, &SolverOptions::default()).unwrap();
        assert_eq!(rep.m_p, 1);
        assert_eq!(x.steps(), &b[..]);
    }

    #[test]
    fn exact_initial_guess_returns_immediately() {
        let b = vec![1.0, 2.0];
        let x0 = Timeseries::from_steps(vec![0.0], b.clone(), 0.0).unwrap();
        let (_, rep) = richardson_solve(ident, ident, &b, &x0, &SolverOptions::default()).unwrap();
        assert_eq!(rep.m_p, 0);
        assert_eq!(rep.residuals, vec![0.0]);
    }

    #[test]
    fn richardson_reports_max_iterations_with_history() {
        let b = vec![1.0];
        let x0 = Timeseries::zeros(vec![0.0], 1, 0.0).unwrap();
        let half = |x: &[f64], y: &mut [f64]| {
            y[0] = 0.5 * x[0];
            Ok(())
        };
        let opts = SolverOptions { max_outer: 4, ..Default::default() };
        match richardson_solve(ident, half, &b, &x0, &opts) {
            Err(Error::MaxIterations { iterations, history, .. }) => {
                assert_eq!(iterations, 4);
                assert_eq!(history.len(), 5);
                assert!((history[4] - 0.0625).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn options_validation() {
        assert!(SolverOptions { rtol: 1.0, ..Default::default() }.validate().is_err());
        assert!(SolverOptions { max_outer: 0, ..Default::default() }.validate().is_err());
        assert!(SolverOptions::default().validate().is_ok());
    }

    #[test]
    fn eisenstat_walker_safeguard_and_bounds() {
        // Raw value tiny, previous forcing large: safeguard keeps it up.
        let eta = eisenstat_walker(0.5, 1.0, 2.0, 1.0);
        assert!((eta - 0.5f64.powf(EW_EXPONENT)).abs() < 1e-15);
        // Safeguard below 0.1 is ignored; floor applies.
        assert_eq!(eisenstat_walker(0.01, 1.0, 2.0, 1.0), EW_FLOOR);
        assert_eq!(eisenstat_walker(0.01, 10.0, 1.0, 0.0), EW_CEILING);
    }

    fn heat_window(nt: usize) -> (LinearProblem, Vec<f64>, ThetaScheme) {
        let p = LinearProblem::heat1d(16, 1.0, BoundaryCondition::Dirichlet, MassKind::Consistent).unwrap();
        let u0: Vec<f64> = (0..16).map(|i| ((i + 1) as f64 * 0.4).sin()).collect();
        let _ = nt;
        (p, u0, ThetaScheme::trapezium(0.01))
    }

    #[test]
    fn linear_window_matches_serial_for_each_method() {
        let nt = 8;
        let (p, u0, scheme) = heat_window(nt);
        let (serial, _) = run_serial(&p, &scheme, &u0, 0.0, nt, &StepOptions::default()).unwrap();
        let form = AllAtOnceForm::new(&p, scheme, nt, 0.0).unwrap();
        let guess = Timeseries::constant(u0.clone(), nt, 0.0).unwrap();
        let mut sols = Vec::new();
        for method in [OuterMethod::Richardson, OuterMethod::Gmres, OuterMethod::Fgmres] {
            let opts = ParadiagOptions {
                solver: SolverOptions { outer_method: method, ..Default::default() },
                ..Default::default()
            };
            let (x, rep) = newton_solve(&form, &guess, &opts).unwrap();
            assert_eq!(rep.newton_its, 1);
            assert!(rep.m_p <= 4, "{method:?}: {}", rep.m_p);
            let err = x.steps().iter().zip(serial.steps()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = serial.steps().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err <= 100.0 * 1e-11 * scale, "{method:?}: {err}");
            let t = &rep.timings;
            assert!(t.blocks + t.transpose + t.fft + t.residual + t.jac <= t.total);
            sols.push(x);
        }
        for s in &sols[1..] {
            let d = s.steps().iter().zip(sols[0].steps()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn standard_gmres_spends_an_extra_application_per_cycle() {
        let nt = 8;
        let (p, u0, scheme) = heat_window(nt);
        let form = AllAtOnceForm::new(&p, scheme, nt, 0.0).unwrap();
        let guess = Timeseries::constant(u0, nt, 0.0).unwrap();
        let run = |m| {
            let opts = ParadiagOptions {
                solver: SolverOptions { outer_method: m, ..Default::default() },
                ..Default::default()
            };
            newton_solve(&form, &guess, &opts).unwrap().1
        };
        let (g, f) = (run(OuterMethod::Gmres), run(OuterMethod::Fgmres));
        assert_eq!(g.preconditioner_applications, g.m_p + 1);
        assert_eq!(f.preconditioner_applications, f.m_p);
    }

    #[test]
    fn burgers_newton_matches_serial() {
        let p = Burgers1d::new(32, 0.01, true).unwrap();
        let scheme = ThetaScheme::trapezium(0.4 / 32.0 / 1.5);
        let u0: Vec<f64> = (0..32).map(|i| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * i as f64 / 32.0).sin()).collect();
        let nt = 8;
        let step_opts = StepOptions { rtol: 1e-13, atol: 1e-15, ..Default::default() };
        let (serial, _) = run_serial(&p, &scheme, &u0, 0.0, nt, &step_opts).unwrap();
        let form = AllAtOnceForm::new(&p, scheme, nt, 0.0).unwrap();
        let guess = Timeseries::constant(u0, nt, 0.0).unwrap();
        for method in [OuterMethod::Gmres, OuterMethod::Fgmres, OuterMethod::Richardson] {
            let opts = ParadiagOptions {
                solver: SolverOptions { outer_method: method, rtol: 1e-10, ..Default::default() },
                ..Default::default()
            };
            let (x, rep) = newton_solve(&form, &guess, &opts).unwrap();
            assert!(rep.newton_its >= 2 && rep.converged);
            assert!(rep.m_p >= rep.newton_its);
            let err = x.steps().iter().zip(serial.steps()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 100.0 * 1e-10 * 1.5, "{method:?}: {err}");
        }
    }

    #[test]
    fn preconditioner_only_newton_converges() {
        let p = Burgers1d::new(16, 0.02, true).unwrap();
        let u0: Vec<f64> = (0..16).map(|i| 0.5 + 0.2 * (0.4 * i as f64).cos()).collect();
        let form = AllAtOnceForm::new(&p, ThetaScheme::trapezium(0.01), 4, 0.0).unwrap();
        let guess = Timeseries::constant(u0, 4, 0.0).unwrap();
        let opts = ParadiagOptions {
            solver: SolverOptions { jacobian_mode: JacobianMode::PreconditionerOnly, rtol: 1e-8, ..Default::default() },
            ..Default::default()
        };
        let (_, rep) = newton_solve(&form, &guess, &opts).unwrap();
        assert_eq!(rep.m_p, rep.newton_its);
        assert!(rep.residuals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn newton_cap_is_reported() {
        let p = Burgers1d::new(16, 0.001, true).unwrap();
        let u0: Vec<f64> = (0..16).map(|i| 1.0 + (0.4 * i as f64).sin()).collect();
        let form = AllAtOnceForm::new(&p, ThetaScheme::trapezium(0.02), 8, 0.0).unwrap();
        let guess = Timeseries::constant(u0, 8, 0.0).unwrap();
        let opts = ParadiagOptions {
            solver: SolverOptions { newton_max: 1, rtol: 1e-12, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(newton_solve(&form, &guess, &opts), Err(Error::NewtonDiverged { iterations: 1, .. })));
    }

    #[test]
    fn report_serialises_with_documented_keys() {
        let rep = SolveReport { m_p: 3, residuals: vec![1.0, 0.1], ..Default::default() };
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        for key in ["m_p", "residuals", "eta", "k_p_max", "k_p_min", "newton_its", "timings"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        for key in ["total", "blocks", "transpose", "fft", "residual", "jac"] {
            assert!(v["timings"].get(key).is_some(), "{key}");
        }
    }
}
