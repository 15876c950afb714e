//! Spatial semi-discretisations `M du/dt + f(u, t) = b(t)` and the serial
//! θ-method reference stepper.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aaos::Timeseries;
use crate::error::{Error, Result};
use crate::numerics::{norm2, BlockMethod, RealBlock, SparseMatrix};
use crate::solvers::{SolveReport, Timings};

/// A spatial operator presented to the time integrators.
///
/// `f` excludes the external forcing, which enters through [`Problem::forcing`]
/// on the right-hand side. For linear problems `f(u, t) = K u` and
/// `jacobian` returns `K` whatever the linearisation state.
pub trait Problem: Send + Sync + fmt::Debug {
    fn nx(&self) -> usize;
    fn mass(&self) -> &SparseMatrix;
    fn f(&self, u: &[f64], t: f64, out: &mut [f64]);
    fn jacobian(&self, u: &[f64], t: f64) -> SparseMatrix;
    fn is_linear(&self) -> bool;
    fn info(&self) -> ProblemInfo;

    /// Writes `b(t)` into `out` and returns `true`, or returns `false` when
    /// the problem is unforced.
    fn forcing(&self, _t: f64, _out: &mut [f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInfo {
    pub kind: String,
    pub nx: usize,
    pub dx: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusivity: Option<f64>,
}

impl ProblemInfo {
    /// Courant number `c dt / dx`, for problems with an advection speed.
    pub fn courant(&self, dt: f64) -> Option<f64> {
        self.speed.map(|c| c.abs() * dt / self.dx)
    }

    pub fn fingerprint(&self, scheme: &ThetaScheme) -> String {
        format!(
            "{}:nx={}:dx={:e}:dt={:e}:theta={}",
            self.kind, self.nx, self.dx, scheme.dt, scheme.theta
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaScheme {
    pub dt: f64,
    pub theta: f64,
}

impl ThetaScheme {
    pub fn new(dt: f64, theta: f64) -> Result<Self> {
        let s = Self { dt, theta };
        s.validate()?;
        Ok(s)
    }

    pub fn backward_euler(dt: f64) -> Self {
        Self { dt, theta: 1.0 }
    }

    pub fn trapezium(dt: f64) -> Self {
        Self { dt, theta: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidInput(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Homogeneous Dirichlet values, eliminated from the unknowns.
    #[default]
    Dirichlet,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassKind {
    #[default]
    Identity,
    /// Linear-element consistent mass scaled by `1/dx`, i.e. `(1, 4, 1) / 6`.
    Consistent,
}

pub type ForcingFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// `M du/dt + K u = b(t)` with constant `M`, `K`.
#[derive(Clone)]
pub struct LinearProblem {
    info: ProblemInfo,
    mass: SparseMatrix,
    stiffness: SparseMatrix,
    forcing: Option<ForcingFn>,
}

impl fmt::Debug for LinearProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearProblem")
            .field("info", &self.info)
            .field("nnz_mass", &self.mass.nnz())
            .field("nnz_stiffness", &self.stiffness.nnz())
            .field("forced", &self.forcing.is_some())
            .finish()
    }
}

fn tridiagonal(n: usize, lower: f64, diag: f64, upper: f64, periodic: bool) -> SparseMatrix {
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        t.push((i, i, diag));
        if i > 0 {
            t.push((i, i - 1, lower));
        } else if periodic && n > 1 {
            t.push((i, n - 1, lower));
        }
        if i + 1 < n {
            t.push((i, i + 1, upper));
        } else if periodic && n > 1 {
            t.push((i, 0, upper));
        }
    }
    SparseMatrix::from_triplets(n, n, &t).expect("indices in range")
}

fn mass_matrix(n: usize, kind: MassKind, periodic: bool) -> SparseMatrix {
    match kind {
        MassKind::Identity => SparseMatrix::identity(n),
        MassKind::Consistent => tridiagonal(n, 1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0, periodic),
    }
}

impl LinearProblem {
    pub fn new(info: ProblemInfo, mass: SparseMatrix, stiffness: SparseMatrix) -> Result<Self> {
        if mass.nrows() != info.nx || stiffness.nrows() != info.nx {
            return Err(Error::InvalidInput("operator size differs from nx".into()));
        }
        Ok(Self {
            info,
            mass,
            stiffness,
            forcing: None,
        })
    }

    pub fn with_forcing(mut self, forcing: ForcingFn) -> Self {
        self.forcing = Some(forcing);
        self
    }

    /// `u_t = nu u_xx` on the unit interval.
    ///
    /// Dirichlet: `nx` interior nodes with `dx = 1/(nx+1)`. Periodic: `nx`
    /// nodes with `dx = 1/nx`.
    pub fn heat1d(nx: usize, nu: f64, bc: BoundaryCondition, mass: MassKind) -> Result<Self> {
        if nx == 0 || !(nu > 0.0) {
            return Err(Error::InvalidInput("heat1d needs nx >= 1 and nu > 0".into()));
        }
        let periodic = bc == BoundaryCondition::Periodic;
        let dx = if periodic { 1.0 / nx as f64 } else { 1.0 / (nx + 1) as f64 };
        let s = nu / (dx * dx);
        let info = ProblemInfo {
            kind: "heat1d".into(),
            nx,
            dx,
            speed: None,
            diffusivity: Some(nu),
        };
        Self::new(
            info,
            mass_matrix(nx, mass, periodic),
            tridiagonal(nx, -s, 2.0 * s, -s, periodic),
        )
    }

    /// `u_t = nu (u_xx + u_yy)` on the unit square, homogeneous Dirichlet,
    /// five-point stencil, row-major unknown ordering.
    pub fn heat2d(nx: usize, ny: usize, nu: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || !(nu > 0.0) {
            return Err(Error::InvalidInput("heat2d needs nx, ny >= 1 and nu > 0".into()));
        }
        let dx = 1.0 / (nx + 1) as f64;
        let dy = 1.0 / (ny + 1) as f64;
        let (sx, sy) = (nu / (dx * dx), nu / (dy * dy));
        let n = nx * ny;
        let idx = |i: usize, j: usize| j * nx + i;
        let mut t = Vec::with_capacity(5 * n);
        for j in 0..ny {
            for i in 0..nx {
                let p = idx(i, j);
                t.push((p, p, 2.0 * (sx + sy)));
                if i > 0 {
                    t.push((p, idx(i - 1, j), -sx));
                }
                if i + 1 < nx {
                    t.push((p, idx(i + 1, j), -sx));
                }
                if j > 0 {
                    t.push((p, idx(i, j - 1), -sy));
                }
                if j + 1 < ny {
                    t.push((p, idx(i, j + 1), -sy));
                }
            }
        }
        let info = ProblemInfo {
            kind: "heat2d".into(),
            nx: n,
            dx: dx.min(dy),
            speed: None,
            diffusivity: Some(nu),
        };
        Self::new(
            info,
            SparseMatrix::identity(n),
            SparseMatrix::from_triplets(n, n, &t)?,
        )
    }

    /// `u_t + c u_x = 0` on the unit interval with first-order upwinding.
    /// Non-periodic domains take a zero inflow value.
    pub fn advection1d(nx: usize, speed: f64, periodic: bool) -> Result<Self> {
        if nx == 0 || speed == 0.0 || !speed.is_finite() {
            return Err(Error::InvalidInput("advection1d needs nx >= 1 and c != 0".into()));
        }
        let dx = 1.0 / nx as f64;
        let s = speed.abs() / dx;
        let k = if speed > 0.0 {
            tridiagonal(nx, -s, s, 0.0, periodic)
        } else {
            tridiagonal(nx, 0.0, s, -s, periodic)
        };
        let info = ProblemInfo {
            kind: "advection1d".into(),
            nx,
            dx,
            speed: Some(speed),
            diffusivity: None,
        };
        Self::new(info, SparseMatrix::identity(nx), k)
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }
}

impl Problem for LinearProblem {
    fn nx(&self) -> usize {
        self.info.nx
    }

    fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    fn f(&self, u: &[f64], _t: f64, out: &mut [f64]) {
        self.stiffness.matvec_into(u, out);
    }

    fn jacobian(&self, _u: &[f64], _t: f64) -> SparseMatrix {
        self.stiffness.clone()
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn info(&self) -> ProblemInfo {
        self.info.clone()
    }

    fn forcing(&self, t: f64, out: &mut [f64]) -> bool {
        match &self.forcing {
            Some(b) => {
                b(t, out);
                true
            }
            None => false,
        }
    }
}

/// Viscous Burgers, `u_t + (u²/2)_x = nu u_xx`, with the flux differenced
/// centrally so that the Jacobian is affine in `u`.
#[derive(Debug, Clone)]
pub struct Burgers1d {
    info: ProblemInfo,
    nu: f64,
    periodic: bool,
    mass: SparseMatrix,
}

impl Burgers1d {
    pub fn new(nx: usize, nu: f64, periodic: bool) -> Result<Self> {
        if nx < 3 || !(nu >= 0.0) {
            return Err(Error::InvalidInput("burgers1d needs nx >= 3 and nu >= 0".into()));
        }
        let dx = if periodic { 1.0 / nx as f64 } else { 1.0 / (nx + 1) as f64 };
        Ok(Self {
            info: ProblemInfo {
                kind: "burgers1d".into(),
                nx,
                dx,
                speed: None,
                diffusivity: Some(nu),
            },
            nu,
            periodic,
            mass: SparseMatrix::identity(nx),
        })
    }

    fn neighbours(&self, i: usize) -> (Option<usize>, Option<usize>) {
        let n = self.info.nx;
        let left = if i > 0 {
            Some(i - 1)
        } else if self.periodic {
            Some(n - 1)
        } else {
            None
        };
        let right = if i + 1 < n {
            Some(i + 1)
        } else if self.periodic {
            Some(0)
        } else {
            None
        };
        (left, right)
    }
}

impl Problem for Burgers1d {
    fn nx(&self) -> usize {
        self.info.nx
    }

    fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    fn f(&self, u: &[f64], _t: f64, out: &mut [f64]) {
        let dx = self.info.dx;
        let visc = self.nu / (dx * dx);
        for i in 0..self.info.nx {
            let (l, r) = self.neighbours(i);
            let ul = l.map_or(0.0, |j| u[j]);
            let ur = r.map_or(0.0, |j| u[j]);
            out[i] = (ur * ur - ul * ul) / (4.0 * dx) - visc * (ur - 2.0 * u[i] + ul);
        }
    }

    fn jacobian(&self, u: &[f64], _t: f64) -> SparseMatrix {
        let dx = self.info.dx;
        let visc = self.nu / (dx * dx);
        let mut t = Vec::with_capacity(3 * self.info.nx);
        for i in 0..self.info.nx {
            t.push((i, i, 2.0 * visc));
            let (l, r) = self.neighbours(i);
            if let Some(j) = l {
                t.push((i, j, -u[j] / (2.0 * dx) - visc));
            }
            if let Some(j) = r {
                t.push((i, j, u[j] / (2.0 * dx) - visc));
            }
        }
        SparseMatrix::from_triplets(self.info.nx, self.info.nx, &t).expect("indices in range")
    }

    fn is_linear(&self) -> bool {
        false
    }

    fn info(&self) -> ProblemInfo {
        self.info.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    pub rtol: f64,
    pub atol: f64,
    pub newton_max: usize,
    pub block: BlockMethod,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            newton_max: 30,
            block: BlockMethod::DenseLu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    /// Number of real-valued block solves (1 for linear problems).
    pub block_solves: usize,
    pub krylov_iterations: usize,
    pub residual: f64,
    pub block_time: f64,
}

/// `b̃ = θ b(t_new) + (1-θ) b(t_old)`, or `None` when unforced.
pub(crate) fn theta_forcing(
    problem: &dyn Problem,
    scheme: &ThetaScheme,
    t_old: f64,
    t_new: f64,
) -> Option<Vec<f64>> {
    let n = problem.nx();
    let mut b_new = vec![0.0; n];
    if !problem.forcing(t_new, &mut b_new) {
        return None;
    }
    let mut b_old = vec![0.0; n];
    problem.forcing(t_old, &mut b_old);
    Some(
        b_new
            .iter()
            .zip(&b_old)
            .map(|(p, q)| scheme.theta * p + (1.0 - scheme.theta) * q)
            .collect(),
    )
}

/// Residual of one θ-step,
/// `M (u - u_old)/dt + θ f(u, t_new) + (1-θ) f_old - b̃`.
fn step_residual(
    problem: &dyn Problem,
    scheme: &ThetaScheme,
    u: &[f64],
    t_new: f64,
    explicit_part: &[f64],
    out: &mut [f64],
) {
    let n = problem.nx();
    let mut fu = vec![0.0; n];
    problem.f(u, t_new, &mut fu);
    problem.mass().matvec_into(u, out);
    for i in 0..n {
        out[i] = out[i] / scheme.dt + scheme.theta * fu[i] + explicit_part[i];
    }
}

/// Serial θ-stepper; keeps the factorised block of a linear problem.
#[derive(Debug)]
pub struct SerialStepper<'a> {
    problem: &'a dyn Problem,
    scheme: ThetaScheme,
    opts: StepOptions,
    linear_block: Option<RealBlock>,
}

impl<'a> SerialStepper<'a> {
    pub fn new(problem: &'a dyn Problem, scheme: ThetaScheme, opts: StepOptions) -> Result<Self> {
        scheme.validate()?;
        let linear_block = if problem.is_linear() {
            let n = problem.nx();
            let k = problem.jacobian(&vec![0.0; n], 0.0);
            let a = SparseMatrix::linear_combination(1.0 / scheme.dt, problem.mass(), scheme.theta, &k);
            Some(RealBlock::new(a, opts.block)?)
        } else {
            None
        };
        Ok(Self {
            problem,
            scheme,
            opts,
            linear_block,
        })
    }

    /// `-M u_old/dt + (1-θ) f(u_old, t_old) - b̃`, the part of the step
    /// residual that does not depend on the new state.
    fn explicit_part(&self, u_old: &[f64], t_old: f64) -> Vec<f64> {
        let (p, s) = (self.problem, &self.scheme);
        let n = p.nx();
        let mut f_old = vec![0.0; n];
        p.f(u_old, t_old, &mut f_old);
        let mu = p.mass().matvec(u_old);
        let forcing = theta_forcing(p, s, t_old, t_old + s.dt);
        (0..n)
            .map(|i| {
                -mu[i] / s.dt + (1.0 - s.theta) * f_old[i] - forcing.as_ref().map_or(0.0, |b| b[i])
            })
            .collect()
    }

    pub fn step(&self, u_old: &[f64], t_old: f64) -> Result<(Vec<f64>, StepStats)> {
        let p = self.problem;
        let n = p.nx();
        if u_old.len() != n {
            return Err(Error::InvalidInput(format!(
                "state has length {}, problem has nx = {n}",
                u_old.len()
            )));
        }
        let t_new = t_old + self.scheme.dt;
        let explicit = self.explicit_part(u_old, t_old);
        let mut stats = StepStats::default();
        let mut r = vec![0.0; n];

        if let Some(block) = &self.linear_block {
            let rhs: Vec<f64> = explicit.iter().map(|v| -v).collect();
            let start = Instant::now();
            let (u, its) = block.solve(&rhs)?;
            stats.block_time += start.elapsed().as_secs_f64();
            stats.block_solves = 1;
            stats.krylov_iterations = its;
            step_residual(p, &self.scheme, &u, t_new, &explicit, &mut r);
            stats.residual = norm2(&r);
            return Ok((u, stats));
        }

        let mut u = u_old.to_vec();
        step_residual(p, &self.scheme, &u, t_new, &explicit, &mut r);
        let r0 = norm2(&r);
        let target = self.opts.atol.max(self.opts.rtol * r0);
        let mut res = r0;
        let mut its = 0;
        while res > target {
            if its >= self.opts.newton_max || !res.is_finite() {
                return Err(Error::NewtonDiverged {
                    step: None,
                    iterations: its,
                    residual: res,
                });
            }
            let jac = p.jacobian(&u, t_new);
            let a = SparseMatrix::linear_combination(1.0 / self.scheme.dt, p.mass(), self.scheme.theta, &jac);
            let start = Instant::now();
            let (du, k) = RealBlock::new(a, self.opts.block)?.solve(&r)?;
            stats.block_time += start.elapsed().as_secs_f64();
            stats.krylov_iterations += k;
            for i in 0..n {
                u[i] -= du[i];
            }
            its += 1;
            step_residual(p, &self.scheme, &u, t_new, &explicit, &mut r);
            res = norm2(&r);
        }
        stats.block_solves = its;
        stats.residual = res;
        Ok((u, stats))
    }
}

/// One θ-method step from `(u_old, t_old)`.
pub fn serial_theta_step(
    problem: &dyn Problem,
    scheme: &ThetaScheme,
    u_old: &[f64],
    t_old: f64,
    opts: &StepOptions,
) -> Result<Vec<f64>> {
    SerialStepper::new(problem, *scheme, *opts)?
        .step(u_old, t_old)
        .map(|(u, _)| u)
}

/// Marches `n_steps` serial θ-steps from `u0` at `t0`.
///
/// The report carries the serial-in-time cost counters: `block_solves`
/// (Newton iterations summed over steps, one per step for linear problems)
/// and `block_krylov_iterations`.
pub fn run_serial(
    problem: &dyn Problem,
    scheme: &ThetaScheme,
    u0: &[f64],
    t0: f64,
    n_steps: usize,
    opts: &StepOptions,
) -> Result<(Timeseries, SolveReport)> {
    if n_steps == 0 {
        return Err(Error::InvalidInput("n_steps must be at least 1".into()));
    }
    let start = Instant::now();
    let stepper = SerialStepper::new(problem, *scheme, *opts)?;
    let mut series = Timeseries::constant(u0.to_vec(), n_steps, t0)?;
    let mut report = SolveReport {
        fingerprint: problem.info().fingerprint(scheme),
        n_steps,
        converged: true,
        ..Default::default()
    };
    let mut prev = u0.to_vec();
    for n in 0..n_steps {
        let t = t0 + n as f64 * scheme.dt;
        let (u, stats) = stepper.step(&prev, t).map_err(|e| match e {
            Error::NewtonDiverged {
                iterations,
                residual,
                ..
            } => Error::NewtonDiverged {
                step: Some(n),
                iterations,
                residual,
            },
            other => other,
        })?;
        report.newton_its += stats.block_solves;
        report.block_solves += stats.block_solves;
        report.block_krylov_iterations += stats.krylov_iterations;
        report.timings.blocks += stats.block_time;
        report.residuals.push(stats.residual);
        series.step_mut(n).copy_from_slice(&u);
        prev = u;
    }
    report.timings = Timings {
        total: start.elapsed().as_secs_f64(),
        ..report.timings
    };
    Ok((series, report))
}
