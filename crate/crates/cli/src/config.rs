//! JSON run configuration.

use std::path::{Path, PathBuf};

use paradiag::aaos::Linearisation;
use paradiag::circulant::ReferenceState;
use paradiag::numerics::BlockMethod;
use paradiag::problems::{BoundaryCondition, Burgers1d, LinearProblem, MassKind, Problem, ThetaScheme};
use paradiag::solvers::{Forcing, JacobianMode, OuterMethod, ParadiagOptions, ResidualScaling, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub scheme: SchemeConfig,
    pub window: WindowConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "one")]
    pub threads: usize,
    /// Seeds random initial data; echoed in every report line.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Heat1d {
        nx: usize,
        nu: f64,
        #[serde(default)]
        bc: BoundaryCondition,
        #[serde(default)]
        mass: MassKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dx: Option<f64>,
        #[serde(default)]
        initial: InitialCondition,
    },
    Heat2d {
        nx: usize,
        ny: usize,
        nu: f64,
        #[serde(default)]
        initial: InitialCondition,
    },
    Advection1d {
        nx: usize,
        c: f64,
        #[serde(default = "yes")]
        periodic: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dx: Option<f64>,
        #[serde(default)]
        initial: InitialCondition,
    },
    Burgers1d {
        nx: usize,
        nu: f64,
        #[serde(default = "yes")]
        periodic: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dx: Option<f64>,
        #[serde(default)]
        initial: InitialCondition,
    },
}

fn yes() -> bool {
    true
}

/// Initial data sampled at the grid nodes `x_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `offset + amplitude · exp(-((x - center)/width)²)`.
    Gaussian {
        center: f64,
        width: f64,
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amplitude · sin(mode π x)`; in 2D the product over both axes.
    Sine {
        #[serde(default = "unit")]
        mode: f64,
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Uniform on `[-amplitude, amplitude]` from the config seed.
    Random {
        #[serde(default = "unit")]
        amplitude: f64,
    },
    Zero,
}

fn unit() -> f64 {
    1.0
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Sine {
            mode: 1.0,
            amplitude: 1.0,
            offset: 0.0,
        }
    }
}

impl InitialCondition {
    fn sample(&self, x: &[f64], seed: u64) -> Vec<f64> {
        match *self {
            InitialCondition::Gaussian {
                center,
                width,
                amplitude,
                offset,
            } => x
                .iter()
                .map(|&xi| offset + amplitude * (-((xi - center) / width).powi(2)).exp())
                .collect(),
            InitialCondition::Sine {
                mode,
                amplitude,
                offset,
            } => x
                .iter()
                .map(|&xi| offset + amplitude * (mode * std::f64::consts::PI * xi).sin())
                .collect(),
            InitialCondition::Random { amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                x.iter().map(|_| rng.gen_range(-amplitude..=amplitude)).collect()
            }
            InitialCondition::Zero => vec![0.0; x.len()],
        }
    }
}

/// Either `dt` or a Courant number `courant = |c| dt / dx` (advection only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub courant: Option<f64>,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Every step of a window starts at its initial condition.
    #[default]
    Constant,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub nt: usize,
    #[serde(default = "one")]
    pub nwindows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<usize>>,
    #[serde(default)]
    pub initial_guess: InitialGuess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub outer: OuterMethod,
    pub rtol: f64,
    pub atol: f64,
    pub max_outer: usize,
    pub newton_max: usize,
    pub alpha: f64,
    pub reference_state: ReferenceState,
    pub block: BlockMethod,
    pub forcing: Forcing,
    pub jacobian_mode: JacobianMode,
    pub residual_scaling: ResidualScaling,
    pub restart: usize,
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverOptions::default();
        let p = ParadiagOptions::default();
        Self {
            outer: s.outer_method,
            rtol: s.rtol,
            atol: s.atol,
            max_outer: s.max_outer,
            newton_max: s.newton_max,
            alpha: p.alpha,
            reference_state: p.reference,
            block: p.block,
            forcing: s.forcing,
            jacobian_mode: s.jacobian_mode,
            residual_scaling: s.residual_scaling,
            restart: s.restart,
            damping: s.damping,
        }
    }
}

impl SolverConfig {
    pub fn to_options(&self) -> ParadiagOptions {
        ParadiagOptions {
            solver: SolverOptions {
                outer_method: self.outer,
                rtol: self.rtol,
                atol: self.atol,
                max_outer: self.max_outer,
                newton_max: self.newton_max,
                forcing: self.forcing,
                jacobian_mode: self.jacobian_mode,
                residual_scaling: self.residual_scaling,
                restart: self.restart,
                damping: self.damping,
            },
            alpha: self.alpha,
            reference: self.reference_state.clone(),
            block: self.block,
            linearisation: Linearisation::Current,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub csv_path: Option<PathBuf>,
    pub json_path: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// When false, timing columns are written as 0 so output is reproducible.
    pub record_timings: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            csv_path: None,
            json_path: None,
            checkpoint_dir: None,
            record_timings: true,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid spacing of the configured problem.
    fn grid_dx(&self) -> f64 {
        match self.problem {
            ProblemConfig::Heat1d { nx, bc, .. } => match bc {
                BoundaryCondition::Dirichlet => 1.0 / (nx + 1) as f64,
                BoundaryCondition::Periodic => 1.0 / nx as f64,
            },
            ProblemConfig::Heat2d { nx, ny, .. } => (1.0 / (nx + 1) as f64).min(1.0 / (ny + 1) as f64),
            ProblemConfig::Advection1d { nx, .. } => 1.0 / nx as f64,
            ProblemConfig::Burgers1d { nx, periodic, .. } => {
                if periodic {
                    1.0 / nx as f64
                } else {
                    1.0 / (nx + 1) as f64
                }
            }
        }
    }

    /// Checks everything that can be checked without building operators.
    pub fn validate(&self) -> Result<(), CliError> {
        let dx = self.grid_dx();
        match &self.problem {
            ProblemConfig::Heat1d { nx, nu, dx: given, .. } => {
                if *nx == 0 || !(*nu > 0.0) {
                    return Err(invalid("heat1d needs nx >= 1 and nu > 0"));
                }
                check_dx(*given, dx)?;
            }
            ProblemConfig::Heat2d { nx, ny, nu, .. } => {
                if *nx == 0 || *ny == 0 || !(*nu > 0.0) {
                    return Err(invalid("heat2d needs nx, ny >= 1 and nu > 0"));
                }
            }
            ProblemConfig::Advection1d { nx, c, dx: given, .. } => {
                if *nx == 0 || *c == 0.0 || !c.is_finite() {
                    return Err(invalid("advection1d needs nx >= 1 and c != 0"));
                }
                check_dx(*given, dx)?;
            }
            ProblemConfig::Burgers1d { nx, nu, dx: given, .. } => {
                if *nx < 3 || !(*nu >= 0.0) {
                    return Err(invalid("burgers1d needs nx >= 3 and nu >= 0"));
                }
                check_dx(*given, dx)?;
            }
        }
        match (self.scheme.dt, self.scheme.courant) {
            (Some(_), Some(_)) => return Err(invalid("give either scheme.dt or scheme.courant, not both")),
            (None, None) => return Err(invalid("scheme.dt or scheme.courant is required")),
            (None, Some(_)) if !matches!(self.problem, ProblemConfig::Advection1d { .. }) => {
                return Err(invalid("scheme.courant needs an advection problem"))
            }
            _ => {}
        }
        self.scheme()?;
        let w = &self.window;
        if w.nt == 0 {
            return Err(invalid("window.nt must be at least 1"));
        }
        if w.nwindows == 0 {
            return Err(invalid("window.nwindows must be at least 1"));
        }
        if let Some(p) = &w.partition {
            if p.iter().any(|&s| s == 0) || p.iter().sum::<usize>() != w.nt {
                return Err(invalid(format!("window.partition {p:?} does not split nt = {}", w.nt)));
            }
        }
        let s = &self.solver;
        if !(s.alpha > 0.0 && s.alpha <= 1.0) {
            return Err(invalid(format!("solver.alpha must lie in (0, 1], got {}", s.alpha)));
        }
        s.to_options().solver.validate().map_err(|e| invalid(e.to_string()))?;
        match s.block {
            BlockMethod::Gmres { tol, max_iters, restart } if !(tol > 0.0) || max_iters == 0 || restart == 0 => {
                return Err(invalid("block gmres needs tol > 0, max_iters >= 1 and restart >= 1"))
            }
            BlockMethod::FixedIterations { iters: 0 } => return Err(invalid("block fixed_iterations needs iters >= 1")),
            _ => {}
        }
        if self.threads == 0 {
            return Err(invalid("threads must be at least 1"));
        }
        Ok(())
    }

    pub fn scheme(&self) -> Result<ThetaScheme, CliError> {
        let dt = match (self.scheme.dt, self.scheme.courant, &self.problem) {
            (Some(dt), _, _) => dt,
            (None, Some(sigma), ProblemConfig::Advection1d { c, .. }) => sigma * self.grid_dx() / c.abs(),
            _ => return Err(invalid("cannot determine dt")),
        };
        ThetaScheme::new(dt, self.scheme.theta).map_err(|e| invalid(e.to_string()))
    }

    pub fn total_steps(&self) -> usize {
        self.window.nt * self.window.nwindows
    }

    pub fn build_problem(&self) -> Result<Box<dyn Problem>, CliError> {
        let p: Box<dyn Problem> = match self.problem {
            ProblemConfig::Heat1d { nx, nu, bc, mass, .. } => Box::new(LinearProblem::heat1d(nx, nu, bc, mass)?),
            ProblemConfig::Heat2d { nx, ny, nu, .. } => Box::new(LinearProblem::heat2d(nx, ny, nu)?),
            ProblemConfig::Advection1d { nx, c, periodic, .. } => Box::new(LinearProblem::advection1d(nx, c, periodic)?),
            ProblemConfig::Burgers1d { nx, nu, periodic, .. } => Box::new(Burgers1d::new(nx, nu, periodic)?),
        };
        Ok(p)
    }

    /// Initial condition at the grid nodes.
    pub fn initial_state(&self) -> Vec<f64> {
        let dx = self.grid_dx();
        match &self.problem {
            ProblemConfig::Heat2d { nx, ny, initial, .. } => {
                let (hx, hy) = (1.0 / (*nx + 1) as f64, 1.0 / (*ny + 1) as f64);
                let xs: Vec<f64> = (1..=*nx).map(|i| i as f64 * hx).collect();
                let ys: Vec<f64> = (1..=*ny).map(|j| j as f64 * hy).collect();
                let fx = initial.sample(&xs, self.seed);
                let fy = initial.sample(&ys, self.seed.wrapping_add(1));
                let mut out = Vec::with_capacity(nx * ny);
                for y in &fy {
                    for x in &fx {
                        out.push(x * y);
                    }
                }
                out
            }
            ProblemConfig::Heat1d { nx, bc, initial, .. } => {
                let first = if *bc == BoundaryCondition::Dirichlet { 1 } else { 0 };
                let xs: Vec<f64> = (0..*nx).map(|i| (i + first) as f64 * dx).collect();
                initial.sample(&xs, self.seed)
            }
            ProblemConfig::Advection1d { nx, initial, .. } => {
                let xs: Vec<f64> = (0..*nx).map(|i| i as f64 * dx).collect();
                initial.sample(&xs, self.seed)
            }
            ProblemConfig::Burgers1d { nx, periodic, initial, .. } => {
                let first = if *periodic { 0 } else { 1 };
                let xs: Vec<f64> = (0..*nx).map(|i| (i + first) as f64 * dx).collect();
                initial.sample(&xs, self.seed)
            }
        }
    }
}

fn check_dx(given: Option<f64>, actual: f64) -> Result<(), CliError> {
    match given {
        Some(d) if (d - actual).abs() > 1e-12 * actual => Err(invalid(format!(
            "problem.dx = {d} disagrees with the grid spacing {actual}"
        ))),
        _ => Ok(()),
    }
}
