//! The α-circulant preconditioner `P = C₁ ⊗ M + C₂ ⊗ ∇f(û, t̂)`.
//!
//! `C₁` and `C₂` are the time-stepping Toeplitz matrices with their
//! wraparound corner scaled by `α`:
//!
//! ```text
//! C₁ = (1/dt) [ 1        -α ]     C₂ = [ θ        α(1-θ) ]
//!             [-1  1        ]          [1-θ  θ           ]
//!             [    ⋱  ⋱     ]          [     ⋱    ⋱      ]
//!             [       -1  1 ]          [        1-θ  θ   ]
//! ```
//!
//! Both are diagonalised by `V = Γ⁻¹ F⁻¹` with `Γ = diag(α^(n/nt))`, so
//! `P⁻¹` is applied as a weighted FFT in time, `nt` independent complex
//! spatial solves, and a weighted inverse FFT.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aaos::{AllAtOnceForm, Timeseries};
use crate::error::{Error, Result};
use crate::numerics::{fft_forward, BlockMethod, ProxyBlock, SparseMatrix, WeightedDftPlan, C64};

/// Below this magnitude a coefficient counts as zero.
const ZERO_COEFFICIENT: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CirculantEigenvalues {
    pub nt: usize,
    pub dt: f64,
    pub theta: f64,
    pub alpha: f64,
    pub lambda1: Vec<C64>,
    pub lambda2: Vec<C64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// `F Γ c` for a first column with entries only at positions 0 and 1.
///
/// Entry `n` is weighted by `α^(n/nt)` and lands at `n mod nt`, so for
/// `nt = 1` the wraparound entry folds onto the diagonal with weight `α`.
fn weighted_symbol(c: [f64; 2], nt: usize, alpha: f64) -> Vec<C64> {
    let mut w = vec![C64::new(0.0, 0.0); nt];
    for (n, &cn) in c.iter().enumerate() {
        w[n % nt] += alpha.powf(n as f64 / nt as f64) * cn;
    }
    fft_forward(&w)
}

impl CirculantEigenvalues {
    pub fn compute(nt: usize, dt: f64, theta: f64, alpha: f64) -> Result<Self> {
        if nt == 0 {
            return Err(Error::InvalidInput("nt must be at least 1".into()));
        }
        if !(dt > 0.0) || !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidInput(format!("bad scheme dt={dt} theta={theta}")));
        }
        check_alpha(alpha)?;
        Ok(Self {
            nt,
            dt,
            theta,
            alpha,
            lambda1: weighted_symbol([1.0 / dt, -1.0 / dt], nt, alpha),
            lambda2: weighted_symbol([theta, 1.0 - theta], nt, alpha),
        })
    }

    pub fn for_form(form: &AllAtOnceForm<'_>, alpha: f64) -> Result<Self> {
        Self::compute(form.nt, form.scheme.dt, form.scheme.theta, alpha)
    }
}

/// `ψₖ = θ dt λ₁ₖ / λ₂ₖ`, the mass-to-stiffness coefficient ratio of block
/// `k` relative to a serial step, whose ratio is 1.
pub fn psi_ratios(eigs: &CirculantEigenvalues) -> Result<Vec<C64>> {
    eigs.lambda1
        .iter()
        .zip(&eigs.lambda2)
        .enumerate()
        .map(|(k, (l1, l2))| {
            if l2.norm() < ZERO_COEFFICIENT {
                Err(Error::DivisionByZero { k })
            } else {
                Ok(l1 / l2 * eigs.dt * eigs.theta)
            }
        })
        .collect()
}

/// `min Re(ψₖ)/|ψₖ|` over frequencies with `min(k, nt-k) <= nt/4`.
pub fn low_frequency_alignment(psi: &[C64]) -> f64 {
    let nt = psi.len();
    psi.iter()
        .enumerate()
        .filter(|(k, _)| (*k).min(nt - *k) * 4 <= nt)
        .map(|(_, p)| p.re / p.norm())
        .fold(f64::INFINITY, f64::min)
}

/// Where the spatial Jacobian of the preconditioner is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReferenceState {
    /// Window time average; `time` defaults to the window midpoint.
    TimeAverage {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time: Option<f64>,
    },
    Initial,
    User { state: Vec<f64>, time: f64 },
    /// The Jacobian is state independent.
    Linear,
}

impl Default for ReferenceState {
    fn default() -> Self {
        ReferenceState::TimeAverage { time: None }
    }
}

/// `(û, t̂)` for the given series. `dt` fixes the window midpoint.
pub fn resolve_reference(u: &Timeseries, reference: &ReferenceState, dt: f64) -> Result<(Vec<f64>, f64)> {
    match reference {
        ReferenceState::TimeAverage { time } => Ok((
            u.time_average(),
            time.unwrap_or(u.t0() + 0.5 * u.nt() as f64 * dt),
        )),
        ReferenceState::Initial | ReferenceState::Linear => {
            Ok((u.initial_condition().to_vec(), u.t0()))
        }
        ReferenceState::User { state, time } => {
            if state.len() != u.nx() {
                return Err(Error::InvalidInput(format!(
                    "reference state has length {}, expected {}",
                    state.len(),
                    u.nx()
                )));
            }
            Ok((state.clone(), *time))
        }
    }
}

/// Relative tolerance for iterative blocks, `1e-3 α / nt`.
pub fn default_block_tolerance(alpha: f64, nt: usize) -> f64 {
    1e-3 * alpha / nt as f64
}

/// Per-application costs of the three-step apply.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BlockStats {
    /// Krylov iterations of each frequency block (1 for LU).
    pub k_p: Vec<usize>,
    pub t_blocks: f64,
    pub t_transpose: f64,
    pub t_fft: f64,
}

/// Prefactorised frequency blocks of `P`.
#[derive(Debug, Clone)]
pub struct CirculantPreconditioner {
    nx: usize,
    eigs: CirculantEigenvalues,
    plan: WeightedDftPlan,
    blocks: Vec<ProxyBlock>,
    setup_time: f64,
}

fn transpose<T: Copy + Send + Sync>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    dst.par_chunks_mut(rows).enumerate().for_each(|(j, out)| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = src[i * cols + j];
        }
    });
}

impl CirculantPreconditioner {
    /// Builds `P` with `jacobian` as the spatial operator of every block.
    pub fn new(
        form: &AllAtOnceForm<'_>,
        alpha: f64,
        jacobian: &SparseMatrix,
        method: BlockMethod,
    ) -> Result<Self> {
        let start = Instant::now();
        let eigs = CirculantEigenvalues::for_form(form, alpha)?;
        let plan = WeightedDftPlan::new(form.nt, alpha)?;
        let mass = form.problem.mass();
        let jnorm = jacobian.norm_inf();
        for (k, (l1, l2)) in eigs.lambda1.iter().zip(&eigs.lambda2).enumerate() {
            if l1.norm() < ZERO_COEFFICIENT && l2.norm() * jnorm < ZERO_COEFFICIENT {
                log::warn!("degenerate circulant block {k}: lambda1 = {l1}, lambda2 = {l2}");
            }
        }
        let blocks = eigs
            .lambda1
            .par_iter()
            .zip(eigs.lambda2.par_iter())
            .enumerate()
            .map(|(k, (&l1, &l2))| {
                ProxyBlock::new(jacobian, mass, l1, l2, method).map_err(|source| Error::Block { k, source })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nx: form.nx(),
            eigs,
            plan,
            blocks,
            setup_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Builds `P` around the reference state of `u`.
    pub fn from_reference(
        form: &AllAtOnceForm<'_>,
        u: &Timeseries,
        reference: &ReferenceState,
        alpha: f64,
        method: BlockMethod,
    ) -> Result<Self> {
        let (state, time) = resolve_reference(u, reference, form.scheme.dt)?;
        let jac = form.problem.jacobian(&state, time);
        Self::new(form, alpha, &jac, method)
    }

    pub fn eigenvalues(&self) -> &CirculantEigenvalues {
        &self.eigs
    }

    pub fn block(&self, k: usize) -> &ProxyBlock {
        &self.blocks[k]
    }

    pub fn setup_time(&self) -> f64 {
        self.setup_time
    }

    pub fn apply(&self, rhs: &[f64]) -> Result<(Vec<f64>, BlockStats)> {
        let order: Vec<usize> = (0..self.eigs.nt).collect();
        self.apply_ordered(rhs, &order)
    }

    /// As [`apply`](Self::apply), dispatching block solves in `order`.
    /// Blocks are independent, so the result does not depend on the order.
    pub fn apply_ordered(&self, rhs: &[f64], order: &[usize]) -> Result<(Vec<f64>, BlockStats)> {
        let (nt, nx) = (self.eigs.nt, self.nx);
        if rhs.len() != nt * nx {
            return Err(Error::InvalidInput(format!(
                "rhs has length {}, expected {}",
                rhs.len(),
                nt * nx
            )));
        }
        let mut stats = BlockStats {
            k_p: vec![0; nt],
            ..Default::default()
        };

        // Step 1: time transform per spatial DoF.
        let t = Instant::now();
        let complex: Vec<C64> = rhs.iter().map(|&v| C64::new(v, 0.0)).collect();
        let mut by_dof = vec![C64::new(0.0, 0.0); nt * nx];
        transpose(&complex, nt, nx, &mut by_dof);
        stats.t_transpose += t.elapsed().as_secs_f64();

        let t = Instant::now();
        by_dof
            .par_chunks_mut(nt)
            .for_each(|series| self.plan.forward_in_place(series));
        stats.t_fft += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut by_freq = vec![C64::new(0.0, 0.0); nt * nx];
        transpose(&by_dof, nx, nt, &mut by_freq);
        stats.t_transpose += t.elapsed().as_secs_f64();

        // Step 2: independent complex blocks.
        let t = Instant::now();
        let solved: Vec<(usize, Vec<C64>, usize)> = order
            .par_iter()
            .map(|&k| {
                self.blocks[k]
                    .solve(&by_freq[k * nx..(k + 1) * nx])
                    .map(|(y, its)| (k, y, its))
                    .map_err(|source| Error::Block { k, source })
            })
            .collect::<Result<_>>()?;
        for (k, y, its) in solved {
            by_freq[k * nx..(k + 1) * nx].copy_from_slice(&y);
            stats.k_p[k] = its;
        }
        stats.t_blocks += t.elapsed().as_secs_f64();

        // Step 3: inverse time transform.
        let t = Instant::now();
        transpose(&by_freq, nt, nx, &mut by_dof);
        stats.t_transpose += t.elapsed().as_secs_f64();

        let t = Instant::now();
        by_dof
            .par_chunks_mut(nt)
            .for_each(|series| self.plan.inverse_in_place(series));
        stats.t_fft += t.elapsed().as_secs_f64();

        let t = Instant::now();
        transpose(&by_dof, nx, nt, &mut by_freq);
        let out = by_freq.iter().map(|z| z.re).collect();
        stats.t_transpose += t.elapsed().as_secs_f64();
        Ok((out, stats))
    }
}

/// One-shot `P⁻¹ rhs` with the Jacobian at the resolved reference state.
pub fn apply_circulant_inverse(
    form: &AllAtOnceForm<'_>,
    alpha: f64,
    u: &Timeseries,
    reference: &ReferenceState,
    rhs: &[f64],
    method: BlockMethod,
) -> Result<(Vec<f64>, BlockStats)> {
    CirculantPreconditioner::from_reference(form, u, reference, alpha, method)?.apply(rhs)
}

/// Matrix-free `(C₁ ⊗ M + C₂ ⊗ J) v`.
pub fn apply_circulant(
    form: &AllAtOnceForm<'_>,
    alpha: f64,
    jacobian: &SparseMatrix,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let (nt, nx) = (form.nt, form.nx());
    if v.len() != nt * nx {
        return Err(Error::InvalidInput("vector length differs from nt * nx".into()));
    }
    let (dt, theta) = (form.scheme.dt, form.scheme.theta);
    let mass = form.problem.mass();
    let mut out = vec![0.0; nt * nx];
    out.par_chunks_mut(nx).enumerate().for_each(|(n, row)| {
        let cur = &v[n * nx..(n + 1) * nx];
        mass.matvec_add(1.0 / dt, cur, row);
        jacobian.matvec_add(theta, cur, row);
        let (prev, scale) = if n > 0 {
            (&v[(n - 1) * nx..n * nx], 1.0)
        } else {
            (&v[(nt - 1) * nx..nt * nx], alpha)
        };
        mass.matvec_add(-scale / dt, prev, row);
        jacobian.matvec_add(scale * (1.0 - theta), prev, row);
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{norm2, DenseLu, DenseMatrix};
    use crate::problems::{BoundaryCondition, Burgers1d, LinearProblem, MassKind, Problem, ThetaScheme};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Explicit `C₁`, `C₂` as dense real matrices.
    fn dense_circulants(nt: usize, dt: f64, theta: f64, alpha: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut c1 = DMatrix::zeros(nt, nt);
        let mut c2 = DMatrix::zeros(nt, nt);
        for n in 0..nt {
            c1[(n, n)] += 1.0 / dt;
            c2[(n, n)] += theta;
            let (m, s) = if n > 0 { (n - 1, 1.0) } else { (nt - 1, alpha) };
            c1[(n, m)] += -s / dt;
            c2[(n, m)] += s * (1.0 - theta);
        }
        (c1, c2)
    }

    fn fourier(nt: usize) -> DMatrix<C64> {
        DMatrix::from_fn(nt, nt, |k, n| C64::from_polar(1.0, -2.0 * PI * (k * n) as f64 / nt as f64))
    }

    #[test]
    fn single_step_folds_wraparound_onto_diagonal() {
        let e = CirculantEigenvalues::compute(1, 0.5, 0.3, 0.2).unwrap();
        assert!((e.lambda1[0] - c(0.8 / 0.5, 0.0)).norm() < 1e-15);
        assert!((e.lambda2[0] - c(0.3 + 0.7 * 0.2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn two_step_hand_example() {
        let e = CirculantEigenvalues::compute(2, 1.0, 0.5, 0.25).unwrap();
        for (got, want) in e.lambda1.iter().zip([0.5, 1.5]) {
            assert!((got - c(want, 0.0)).norm() < 1e-15);
        }
        for (got, want) in e.lambda2.iter().zip([0.75, 0.25]) {
            assert!((got - c(want, 0.0)).norm() < 1e-15);
        }
        let psi = psi_ratios(&e).unwrap();
        assert!((psi[0] - c(1.0 / 3.0, 0.0)).norm() < 1e-14);
        assert!((psi[1] - c(3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn closed_form_eigenvalues() {
        let (nt, dt, theta, alpha) = (12, 0.1, 0.6, 1e-3);
        let e = CirculantEigenvalues::compute(nt, dt, theta, alpha).unwrap();
        let a = alpha.powf(1.0 / nt as f64);
        for k in 0..nt {
            let z = C64::from_polar(a, -2.0 * PI * k as f64 / nt as f64);
            assert!((e.lambda1[k] - (1.0 - z) / dt).norm() < 1e-12);
            assert!((e.lambda2[k] - (theta + (1.0 - theta) * z)).norm() < 1e-12);
        }
    }

    #[test]
    fn weighted_fourier_reconstructs_circulants() {
        for nt in [1usize, 2, 4, 8, 16] {
            for alpha in [1.0, 0.5, 1e-2, 1e-4] {
                let (dt, theta) = (0.3, 0.5);
                let e = CirculantEigenvalues::compute(nt, dt, theta, alpha).unwrap();
                let f = fourier(nt);
                let finv = f.adjoint() / C64::new(nt as f64, 0.0);
                let gamma = DMatrix::from_fn(nt, nt, |i, j| {
                    if i == j { c(alpha.powf(i as f64 / nt as f64), 0.0) } else { c(0.0, 0.0) }
                });
                let gamma_inv = gamma.map(|g| if g.norm() > 0.0 { 1.0 / g } else { g });
                let v = &gamma_inv * &finv;
                let vinv = &f * &gamma;
                let (c1, c2) = dense_circulants(nt, dt, theta, alpha);
                for (lam, cj) in [(&e.lambda1, c1), (&e.lambda2, c2)] {
                    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(lam));
                    let rec = &v * d * &vinv;
                    let err = (0..nt * nt)
                        .map(|idx| (rec[idx] - c(cj[idx], 0.0)).norm())
                        .fold(0.0, f64::max);
                    assert!(err < 1e-10, "nt={nt} alpha={alpha}: {err}");
                }
            }
        }
    }

    fn match_multisets(a: &[C64], b: &[C64], tol: f64) -> bool {
        let mut used = vec![false; b.len()];
        a.iter().all(|x| {
            let best = (0..b.len())
                .filter(|&j| !used[j])
                .min_by(|&i, &j| (b[i] - x).norm().total_cmp(&(b[j] - x).norm()));
            match best {
                Some(j) if (b[j] - x).norm() <= tol * (1.0 + x.norm()) => {
                    used[j] = true;
                    true
                }
                _ => false,
            }
        })
    }

    #[test]
    fn eigenvalues_match_dense_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let nt = rng.gen_range(1..=16);
            let dt = rng.gen_range(0.01..1.0);
            let theta = rng.gen_range(0.0..=1.0);
            let alpha = 10f64.powf(rng.gen_range(-2.0..0.0));
            let e = CirculantEigenvalues::compute(nt, dt, theta, alpha).unwrap();
            let (c1, c2) = dense_circulants(nt, dt, theta, alpha);
            let ev1: Vec<C64> = c1.complex_eigenvalues().iter().copied().collect();
            let ev2: Vec<C64> = c2.complex_eigenvalues().iter().copied().collect();
            assert!(match_multisets(&e.lambda1, &ev1, 1e-10), "C1 nt={nt}");
            assert!(match_multisets(&e.lambda2, &ev2, 1e-10), "C2 nt={nt}");
        }
    }

    #[test]
    fn psi_limits_and_errors() {
        let e = CirculantEigenvalues::compute(1, 0.7, 0.5, 1e-12).unwrap();
        assert!((psi_ratios(&e).unwrap()[0] - c(1.0, 0.0)).norm() < 1e-10);
        let e = CirculantEigenvalues::compute(2, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(psi_ratios(&e), Err(Error::DivisionByZero { k: 1 }));
    }

    #[test]
    fn psi_clusters_towards_imaginary_axis() {
        let vals: Vec<f64> = [16usize, 32, 64, 128, 256]
            .iter()
            .map(|&nt| {
                let e = CirculantEigenvalues::compute(nt, 0.01, 0.5, 1e-4).unwrap();
                low_frequency_alignment(&psi_ratios(&e).unwrap())
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
    }

    #[test]
    fn reference_state_resolution() {
        let u = Timeseries::from_steps(vec![3.0, 3.0], vec![1.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        let (avg, t) = resolve_reference(&u, &ReferenceState::default(), 0.5).unwrap();
        assert_eq!((avg, t), (vec![0.5, 0.5], 1.5));
        let (init, t) = resolve_reference(&u, &ReferenceState::Initial, 0.5).unwrap();
        assert_eq!((init, t), (vec![3.0, 3.0], 1.0));
        let user = ReferenceState::User { state: vec![1.0], time: 0.0 };
        assert!(resolve_reference(&u, &user, 0.5).is_err());
        let w = vec![0.25, -1.0];
        let cst = Timeseries::constant(w.clone(), 5, 0.0).unwrap();
        assert_eq!(resolve_reference(&cst, &ReferenceState::default(), 0.1).unwrap().0, w);
    }

    fn heat_form(p: &LinearProblem, nt: usize) -> AllAtOnceForm<'_> {
        AllAtOnceForm::new(p, ThetaScheme::new(0.1, 0.6).unwrap(), nt, 0.0).unwrap()
    }

    /// Dense `P = C₁ ⊗ M + C₂ ⊗ K`.
    fn dense_p(form: &AllAtOnceForm<'_>, alpha: f64, k: &SparseMatrix) -> DenseMatrix {
        let (c1, c2) = dense_circulants(form.nt, form.scheme.dt, form.scheme.theta, alpha);
        let to_dense = |m: DMatrix<f64>| DenseMatrix::from_row_major(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec());
        let a = to_dense(c1).kron(&form.problem.mass().to_dense());
        let b = to_dense(c2).kron(&k.to_dense());
        DenseMatrix::from_row_major(a.nrows(), a.ncols(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
    }

    #[test]
    fn three_step_apply_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = LinearProblem::heat1d(3, 0.8, BoundaryCondition::Dirichlet, MassKind::Consistent).unwrap();
        let form = heat_form(&p, 4);
        for alpha in [1e-4, 0.3, 1.0] {
            let pc = CirculantPreconditioner::new(&form, alpha, p.stiffness(), BlockMethod::DenseLu).unwrap();
            let rhs: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (x, stats) = pc.apply(&rhs).unwrap();
            let want = DenseLu::factor(&dense_p(&form, alpha, p.stiffness())).unwrap().solve(&rhs);
            let err: Vec<f64> = x.iter().zip(&want).map(|(a, b)| a - b).collect();
            assert!(norm2(&err) <= 1e-8 * norm2(&want));
            assert_eq!(stats.k_p, vec![1; 4]);
            let back = apply_circulant(&form, alpha, p.stiffness(), &x).unwrap();
            let res: Vec<f64> = back.iter().zip(&rhs).map(|(a, b)| a - b).collect();
            assert!(norm2(&res) <= 1e-10 * norm2(&rhs));
        }
    }

    #[test]
    fn scalar_circulant() {
        #[derive(Debug)]
        struct Zero(SparseMatrix);
        impl Problem for Zero {
            fn nx(&self) -> usize { 1 }
            fn mass(&self) -> &SparseMatrix { &self.0 }
            fn f(&self, _u: &[f64], _t: f64, out: &mut [f64]) { out[0] = 0.0 }
            fn jacobian(&self, _u: &[f64], _t: f64) -> SparseMatrix { SparseMatrix::zeros(1, 1) }
            fn is_linear(&self) -> bool { true }
            fn info(&self) -> crate::problems::ProblemInfo {
                crate::problems::ProblemInfo { kind: "zero".into(), nx: 1, dx: 1.0, speed: None, diffusivity: None }
            }
        }
        let p = Zero(SparseMatrix::identity(1));
        let form = AllAtOnceForm::new(&p, ThetaScheme::backward_euler(0.2), 1, 0.0).unwrap();
        let alpha = 0.25;
        let pc = CirculantPreconditioner::new(&form, alpha, &SparseMatrix::zeros(1, 1), BlockMethod::DenseLu).unwrap();
        let (x, _) = pc.apply(&[3.0]).unwrap();
        assert!((x[0] - 0.2 * 3.0 / (1.0 - alpha)).abs() < 1e-14);
    }

    #[test]
    fn periodic_backward_euler_at_alpha_one() {
        let p = LinearProblem::heat1d(3, 1.0, BoundaryCondition::Dirichlet, MassKind::Identity).unwrap();
        let form = AllAtOnceForm::new(&p, ThetaScheme::backward_euler(0.1), 4, 0.0).unwrap();
        let dense = dense_p(&form, 1.0, p.stiffness());
        // Periodic backward Euler: (I/dt + K) on the diagonal, -I/dt on the cyclic subdiagonal.
        for n in 0..4 {
            let m = (n + 3) % 4;
            for i in 0..3 {
                for j in 0..3 {
                    let diag = if i == j { 10.0 } else { 0.0 } + p.stiffness().get(i, j);
                    assert!((dense.get(n * 3 + i, n * 3 + j) - diag).abs() < 1e-12);
                    let sub = if i == j { -10.0 } else { 0.0 };
                    assert!((dense.get(n * 3 + i, m * 3 + j) - sub).abs() < 1e-12);
                }
            }
        }
        let pc = CirculantPreconditioner::new(&form, 1.0, p.stiffness(), BlockMethod::DenseLu).unwrap();
        let rhs: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let want = DenseLu::factor(&dense).unwrap().solve(&rhs);
        let got = pc.apply(&rhs).unwrap().0;
        assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn block_order_does_not_change_result() {
        let p = Burgers1d::new(10, 0.05, true).unwrap();
        let form = AllAtOnceForm::new(&p, ThetaScheme::trapezium(0.02), 8, 0.0).unwrap();
        let u0: Vec<f64> = (0..10).map(|i| 1.0 + 0.5 * (0.6 * i as f64).sin()).collect();
        let u = Timeseries::constant(u0, 8, 0.0).unwrap();
        let pc = CirculantPreconditioner::from_reference(&form, &u, &ReferenceState::default(), 1e-4, BlockMethod::DenseLu).unwrap();
        let rhs: Vec<f64> = (0..80).map(|i| (0.37 * i as f64).sin()).collect();
        let (a, _) = pc.apply(&rhs).unwrap();
        let (b, _) = pc.apply_ordered(&rhs, &[5, 0, 7, 2, 6, 1, 4, 3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iterative_blocks_approximate_lu() {
        let p = LinearProblem::heat1d(20, 0.5, BoundaryCondition::Dirichlet, MassKind::Identity).unwrap();
        let form = heat_form(&p, 8);
        let alpha = 1e-2;
        let lu = CirculantPreconditioner::new(&form, alpha, p.stiffness(), BlockMethod::DenseLu).unwrap();
        let tol = default_block_tolerance(alpha, 8);
        let it = CirculantPreconditioner::new(
            &form,
            alpha,
            p.stiffness(),
            BlockMethod::Gmres { tol, max_iters: 200, restart: 50 },
        )
        .unwrap();
        let rhs: Vec<f64> = (0..160).map(|i| (0.1 * i as f64).cos()).collect();
        let (a, _) = lu.apply(&rhs).unwrap();
        let (b, stats) = it.apply(&rhs).unwrap();
        let err: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(norm2(&err) <= 1e3 * tol * norm2(&a));
        assert!(stats.k_p.iter().all(|&k| k >= 1));
        let fixed = CirculantPreconditioner::new(&form, alpha, p.stiffness(), BlockMethod::FixedIterations { iters: 3 }).unwrap();
        assert_eq!(fixed.apply(&rhs).unwrap().1.k_p, vec![3; 8]);
    }

    #[test]
    fn time_average_reference_equals_averaged_jacobians() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = Burgers1d::new(8, 0.02, true).unwrap();
        let nt = 6;
        let form = AllAtOnceForm::new(&p, ThetaScheme::trapezium(0.05), nt, 0.0).unwrap();
        let steps: Vec<f64> = (0..nt * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = Timeseries::from_steps(vec![0.0; 8], steps, 0.0).unwrap();
        let from_avg = CirculantPreconditioner::from_reference(&form, &u, &ReferenceState::default(), 1e-3, BlockMethod::DenseLu).unwrap();
        let mut avg_jac = SparseMatrix::zeros(8, 8);
        for n in 0..nt {
            avg_jac = SparseMatrix::linear_combination(1.0, &avg_jac, 1.0 / nt as f64, &p.jacobian(u.step(n), 0.0));
        }
        let from_jacs = CirculantPreconditioner::new(&form, 1e-3, &avg_jac, BlockMethod::DenseLu).unwrap();
        for k in 0..nt {
            let a = from_avg.block(k).embedding().to_dense();
            let b = from_jacs.block(k).embedding().to_dense();
            let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-12 * a.max_abs().max(1.0), "block {k}: {diff}");
        }
    }

    fn round_trip_error(alpha: f64, seed: u64) -> f64 {
        let p = LinearProblem::heat1d(4, 1.0, BoundaryCondition::Dirichlet, MassKind::Identity).unwrap();
        let form = AllAtOnceForm::new(&p, ThetaScheme::trapezium(0.05), 64, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pv = apply_circulant(&form, alpha, p.stiffness(), &v).unwrap();
        let pc = CirculantPreconditioner::new(&form, alpha, p.stiffness(), BlockMethod::DenseLu).unwrap();
        let back = pc.apply(&pv).unwrap().0;
        let e: Vec<f64> = back.iter().zip(&v).map(|(a, b)| a - b).collect();
        norm2(&e) / norm2(&v)
    }

    #[test]
    fn roundoff_grows_as_alpha_shrinks() {
        for seed in 0..3 {
            let (e4, e8) = (round_trip_error(1e-4, seed), round_trip_error(1e-8, seed));
            assert!(e8 > e4, "seed {seed}: {e8} <= {e4}");
            assert!(e4 < 64.0 * f64::EPSILON * 1e8 * 10.0);
        }
    }

    #[test]
    fn unit_eigenvalues_of_preconditioned_operator() {
        let p = LinearProblem::heat1d(3, 1.0, BoundaryCondition::Dirichlet, MassKind::Identity).unwrap();
        let form = heat_form(&p, 4);
        let alpha = 1e-2;
        let pc = CirculantPreconditioner::new(&form, alpha, p.stiffness(), BlockMethod::DenseLu).unwrap();
        let u = Timeseries::zeros(vec![0.0; 3], 4, 0.0).unwrap();
        let jac = form.jacobian(&u, &crate::aaos::Linearisation::Current).unwrap();
        let mut m = DMatrix::<f64>::zeros(12, 12);
        for j in 0..12 {
            let mut e = vec![0.0; 12];
            e[j] = 1.0;
            let col = pc.apply(&jac.apply(&e)).unwrap().0;
            for i in 0..12 {
                m[(i, j)] = col[i];
            }
        }
        // The nullity of P⁻¹A - I bounds the multiplicity of the unit eigenvalue from below.
        let shifted = m - DMatrix::<f64>::identity(12, 12);
        let nullity = shifted.singular_values().iter().filter(|&&s| s < 1e-6).count();
        assert!(nullity >= 9, "{nullity}");
    }
}
