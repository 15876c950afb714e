//! The all-at-once space-time system of one window.
//!
//! Unknowns are laid out step-major: entry `n * nx + i` is spatial DoF `i`
//! of step `n`, which holds the state at `t0 + (n + 1) dt`. The initial
//! condition `u⁰` is stored separately and is not an unknown.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;
use crate::problems::{theta_forcing, Problem, ThetaScheme};

#[derive(Debug, Clone, PartialEq)]
pub struct Timeseries {
    nx: usize,
    nt: usize,
    steps: Vec<f64>,
    initial_condition: Vec<f64>,
    t0: f64,
    partition: Vec<usize>,
}

impl Timeseries {
    /// Every step set to `u0`, a single slice.
    pub fn constant(u0: Vec<f64>, nt: usize, t0: f64) -> Result<Self> {
        let steps = u0.repeat(nt);
        Self::from_steps(u0, steps, t0)
    }

    pub fn zeros(u0: Vec<f64>, nt: usize, t0: f64) -> Result<Self> {
        let steps = vec![0.0; u0.len() * nt];
        Self::from_steps(u0, steps, t0)
    }

    /// `steps` holds `nt` consecutive states of length `u0.len()`.
    pub fn from_steps(u0: Vec<f64>, steps: Vec<f64>, t0: f64) -> Result<Self> {
        let nx = u0.len();
        if nx == 0 || steps.is_empty() || steps.len() % nx != 0 {
            return Err(Error::InvalidInput(format!(
                "{} step values do not tile a state of length {nx}",
                steps.len()
            )));
        }
        let nt = steps.len() / nx;
        Ok(Self {
            nx,
            nt,
            steps,
            initial_condition: u0,
            t0,
            partition: vec![nt],
        })
    }

    pub fn with_partition(mut self, partition: Vec<usize>) -> Result<Self> {
        if partition.iter().any(|&p| p == 0) || partition.iter().sum::<usize>() != self.nt {
            return Err(Error::InvalidInput(format!(
                "partition {partition:?} does not split {} steps",
                self.nt
            )));
        }
        self.partition = partition;
        Ok(self)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn initial_condition(&self) -> &[f64] {
        &self.initial_condition
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn steps_mut(&mut self) -> &mut [f64] {
        &mut self.steps
    }

    pub fn into_steps(self) -> Vec<f64> {
        self.steps
    }

    pub fn step(&self, n: usize) -> &[f64] {
        &self.steps[n * self.nx..(n + 1) * self.nx]
    }

    pub fn step_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.steps[n * self.nx..(n + 1) * self.nx]
    }

    /// Step `n - 1`, with `u⁰` standing in for step `-1`.
    pub fn previous(&self, n: usize) -> &[f64] {
        if n == 0 {
            &self.initial_condition
        } else {
            self.step(n - 1)
        }
    }

    /// Step ranges of each slice, in order.
    pub fn slices(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.partition
            .iter()
            .map(|&len| {
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }

    /// Same shape and initial condition, new step values.
    pub fn with_steps(&self, steps: Vec<f64>) -> Result<Self> {
        if steps.len() != self.steps.len() {
            return Err(Error::InvalidInput("step data length changed".into()));
        }
        Ok(Self {
            steps,
            ..self.clone()
        })
    }

    /// `(1/nt) Σ uⁿ` over the window.
    pub fn time_average(&self) -> Vec<f64> {
        let mut avg = vec![0.0; self.nx];
        for n in 0..self.nt {
            for (a, v) in avg.iter_mut().zip(self.step(n)) {
                *a += v;
            }
        }
        let s = 1.0 / self.nt as f64;
        avg.iter_mut().for_each(|a| *a *= s);
        avg
    }
}

/// Copy of the last step, the next window's initial condition.
pub fn bcast_final_step(u: &Timeseries) -> Vec<f64> {
    u.step(u.nt - 1).to_vec()
}

/// The θ-method applied to `problem` over `nt` steps from `t0`.
#[derive(Debug, Clone, Copy)]
pub struct AllAtOnceForm<'a> {
    pub problem: &'a dyn Problem,
    pub scheme: ThetaScheme,
    pub nt: usize,
    pub t0: f64,
}

/// Which states the Jacobian of the all-at-once residual is linearised at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Linearisation {
    /// Each step at its own state: the exact Jacobian.
    #[default]
    Current,
    /// Every step at the window time average.
    TimeAverage,
    /// Every step at the initial condition.
    Initial,
    User { state: Vec<f64> },
}

impl<'a> AllAtOnceForm<'a> {
    pub fn new(problem: &'a dyn Problem, scheme: ThetaScheme, nt: usize, t0: f64) -> Result<Self> {
        scheme.validate()?;
        if nt == 0 {
            return Err(Error::InvalidInput("nt must be at least 1".into()));
        }
        Ok(Self {
            problem,
            scheme,
            nt,
            t0,
        })
    }

    pub fn nx(&self) -> usize {
        self.problem.nx()
    }

    pub fn len(&self) -> usize {
        self.nt * self.nx()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `tⁿ = t0 + n dt` for `n = 0..=nt`; step `n` of a series lives at `times[n + 1]`.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.nt)
            .map(|n| self.t0 + n as f64 * self.scheme.dt)
            .collect()
    }

    fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.scheme.dt
    }

    fn check(&self, u: &Timeseries) -> Result<()> {
        if u.nx != self.nx() || u.nt != self.nt {
            return Err(Error::InvalidInput(format!(
                "series is {}x{}, form expects {}x{}",
                u.nt,
                u.nx,
                self.nt,
                self.nx()
            )));
        }
        Ok(())
    }

    /// Residual row of step `n` given its own state and the previous one.
    fn residual_row(&self, n: usize, prev: &[f64], cur: &[f64], out: &mut [f64]) {
        let p = self.problem;
        let nx = self.nx();
        let (dt, theta) = (self.scheme.dt, self.scheme.theta);
        let (t_prev, t_cur) = (self.time(n), self.time(n + 1));
        let mut f_cur = vec![0.0; nx];
        let mut f_prev = vec![0.0; nx];
        p.f(cur, t_cur, &mut f_cur);
        p.f(prev, t_prev, &mut f_prev);
        let diff: Vec<f64> = cur.iter().zip(prev).map(|(a, b)| a - b).collect();
        p.mass().matvec_into(&diff, out);
        for i in 0..nx {
            out[i] = out[i] / dt + theta * f_cur[i] + (1.0 - theta) * f_prev[i];
        }
        if let Some(b) = theta_forcing(p, &self.scheme, t_prev, t_cur) {
            for i in 0..nx {
                out[i] -= b[i];
            }
        }
    }

    /// `rⁿ = M(uⁿ - uⁿ⁻¹)/dt + θ f(uⁿ, tⁿ) + (1-θ) f(uⁿ⁻¹, tⁿ⁻¹) - b̃ⁿ`.
    ///
    /// Slices are evaluated independently after copying the last step of
    /// the previous slice, so the result does not depend on the partition.
    pub fn residual(&self, u: &Timeseries) -> Result<Vec<f64>> {
        self.check(u)?;
        let nx = self.nx();
        let mut r = vec![0.0; self.len()];
        let slices = u.slices();
        let halos: Vec<&[f64]> = slices.iter().map(|s| u.previous(s.start)).collect();
        let mut chunks: Vec<&mut [f64]> = Vec::with_capacity(slices.len());
        let mut rest = r.as_mut_slice();
        for s in &slices {
            let (head, tail) = rest.split_at_mut(s.len() * nx);
            chunks.push(head);
            rest = tail;
        }
        chunks
            .into_par_iter()
            .zip(slices.par_iter())
            .zip(halos.par_iter())
            .for_each(|((out, range), halo)| {
                let mut prev: &[f64] = halo;
                for (local, n) in range.clone().enumerate() {
                    let cur = u.step(n);
                    self.residual_row(n, prev, cur, &mut out[local * nx..(local + 1) * nx]);
                    prev = cur;
                }
            });
        Ok(r)
    }

    /// Right-hand side `b` of the linear system `A u = b`, i.e. `-r(0)`.
    /// Only meaningful for linear problems.
    pub fn linear_rhs(&self, u0: &[f64]) -> Result<Vec<f64>> {
        let zero = Timeseries::zeros(u0.to_vec(), self.nt, self.t0)?;
        Ok(self.residual(&zero)?.into_iter().map(|v| -v).collect())
    }

    /// Spatial Jacobians for each step under `lin`; `u` supplies the states.
    pub fn jacobian(&self, u: &Timeseries, lin: &Linearisation) -> Result<AllAtOnceJacobian<'a>> {
        self.check(u)?;
        let p = self.problem;
        let jacs = if p.is_linear() {
            JacobianBlocks::Shared(p.jacobian(u.initial_condition(), self.t0))
        } else {
            match lin {
                Linearisation::Current => JacobianBlocks::PerStep(
                    (0..self.nt)
                        .into_par_iter()
                        .map(|n| p.jacobian(u.step(n), self.time(n + 1)))
                        .collect(),
                ),
                Linearisation::TimeAverage => JacobianBlocks::Shared(
                    p.jacobian(&u.time_average(), self.t0 + 0.5 * self.nt as f64 * self.scheme.dt),
                ),
                Linearisation::Initial => {
                    JacobianBlocks::Shared(p.jacobian(u.initial_condition(), self.t0))
                }
                Linearisation::User { state } => {
                    if state.len() != self.nx() {
                        return Err(Error::InvalidInput("user linearisation state has wrong length".into()));
                    }
                    JacobianBlocks::Shared(p.jacobian(state, self.t0))
                }
            }
        };
        Ok(AllAtOnceJacobian {
            mass: p.mass(),
            scheme: self.scheme,
            nt: self.nt,
            nx: self.nx(),
            jacs,
        })
    }
}

#[derive(Debug, Clone)]
enum JacobianBlocks {
    Shared(SparseMatrix),
    PerStep(Vec<SparseMatrix>),
}

/// `(B₁ ⊗ M) + (B₂ ⊗ I) blockdiag(∇f(ûⁿ))`, applied matrix-free.
#[derive(Debug, Clone)]
pub struct AllAtOnceJacobian<'a> {
    mass: &'a SparseMatrix,
    scheme: ThetaScheme,
    nt: usize,
    nx: usize,
    jacs: JacobianBlocks,
}

impl AllAtOnceJacobian<'_> {
    fn block(&self, n: usize) -> &SparseMatrix {
        match &self.jacs {
            JacobianBlocks::Shared(j) => j,
            JacobianBlocks::PerStep(js) => &js[n],
        }
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        assert_eq!(v.len(), self.nt * nx, "jacobian action length");
        let (dt, theta) = (self.scheme.dt, self.scheme.theta);
        out.par_chunks_mut(nx).enumerate().for_each(|(n, row)| {
            let cur = &v[n * nx..(n + 1) * nx];
            self.mass.matvec_into(cur, row);
            row.iter_mut().for_each(|x| *x /= dt);
            self.block(n).matvec_add(theta, cur, row);
            if n > 0 {
                let prev = &v[(n - 1) * nx..n * nx];
                self.mass.matvec_add(-1.0 / dt, prev, row);
                self.block(n - 1).matvec_add(1.0 - theta, prev, row);
            }
        });
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub nx: usize,
    pub t: f64,
    pub window: usize,
}

fn checkpoint_paths(dir: &Path, window: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("window_{window:04}.bin")),
        dir.join(format!("window_{window:04}.json")),
    )
}

/// Writes `state` as little-endian f64 plus a JSON sidecar; returns the data path.
pub fn write_checkpoint(dir: &Path, window: usize, t: f64, state: &[f64]) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (bin, json) = checkpoint_paths(dir, window);
    let mut bytes = Vec::with_capacity(state.len() * 8);
    for v in state {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(&bin)?.write_all(&bytes)?;
    let meta = CheckpointMeta {
        nx: state.len(),
        t,
        window,
    };
    fs::write(&json, serde_json::to_vec_pretty(&meta)?)?;
    Ok(bin)
}

pub fn read_checkpoint(dir: &Path, window: usize) -> std::io::Result<(CheckpointMeta, Vec<f64>)> {
    let (bin, json) = checkpoint_paths(dir, window);
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(json)?)?;
    let bytes = fs::read(bin)?;
    if bytes.len() != meta.nx * 8 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("expected {} bytes, found {}", meta.nx * 8, bytes.len()),
        ));
    }
    let state = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((meta, state))
}
