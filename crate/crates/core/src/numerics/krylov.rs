//! Restarted right-preconditioned GMRES and its flexible variant.
//!
//! Shared by the inner block solves and the outer all-at-once solver.
//! Right preconditioning keeps the Arnoldi residual equal to the true
//! (unpreconditioned) residual, so stopping tests compare like with like.

use super::{axpy, norm2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresParams {
    pub rtol: f64,
    pub atol: f64,
    /// Iteration cap summed across restart cycles.
    pub max_iters: usize,
    pub restart: usize,
    /// Store `M⁻¹ v_j` per iteration (FGMRES) instead of applying `M⁻¹`
    /// once more at the end of every cycle.
    pub flexible: bool,
    /// Run exactly `max_iters` iterations, ignoring the tolerance.
    pub fixed_iterations: bool,
}

impl Default for GmresParams {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 0.0,
            max_iters: 200,
            restart: 30,
            flexible: false,
            fixed_iterations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub preconditioner_applications: usize,
    /// `history[0]` is the initial residual, then one entry per iteration.
    pub residual_history: Vec<f64>,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub target: f64,
    pub converged: bool,
    /// Arnoldi produced a (numerically) zero vector.
    pub breakdown: bool,
}

/// Solves `A x = b` with right preconditioner `M⁻¹`, updating `x` in place.
///
/// Errors raised by either operator abort the solve and are returned as is;
/// failing to converge is reported through `GmresOutcome::converged`.
pub fn gmres<E, A, P>(
    mut apply_a: A,
    mut apply_pc: P,
    b: &[f64],
    x: &mut [f64],
    params: &GmresParams,
) -> Result<GmresOutcome, E>
where
    A: FnMut(&[f64], &mut [f64]) -> Result<(), E>,
    P: FnMut(&[f64], &mut [f64]) -> Result<(), E>,
{
    let n = b.len();
    assert_eq!(x.len(), n, "gmres: solution length");
    let restart = params.restart.max(1);

    let mut tmp = vec![0.0; n];
    let mut r = vec![0.0; n];
    apply_a(x, &mut tmp)?;
    for i in 0..n {
        r[i] = b[i] - tmp[i];
    }
    let mut beta = norm2(&r);
    let r0 = beta;
    let target = params.atol.max(params.rtol * r0);
    let mut out = GmresOutcome {
        iterations: 0,
        preconditioner_applications: 0,
        residual_history: vec![beta],
        initial_residual: r0,
        final_residual: beta,
        target,
        converged: false,
        breakdown: false,
    };
    if beta == 0.0 || (!params.fixed_iterations && beta <= target) {
        out.converged = true;
        return Ok(out);
    }
    if params.max_iters == 0 {
        return Ok(out);
    }

    loop {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
        let mut zs: Vec<Vec<f64>> = Vec::new();
        // Hessenberg columns, each of length j + 2.
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(restart);
        let mut cs: Vec<f64> = Vec::with_capacity(restart);
        let mut sn: Vec<f64> = Vec::with_capacity(restart);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        basis.push(r.iter().map(|v| v / beta).collect());

        let mut j = 0;
        while j < restart && out.iterations < params.max_iters {
            let mut z = vec![0.0; n];
            apply_pc(&basis[j], &mut z)?;
            out.preconditioner_applications += 1;
            let mut w = vec![0.0; n];
            apply_a(&z, &mut w)?;
            if params.flexible {
                zs.push(z);
            }
            let w_norm0 = norm2(&w);
            let mut col = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = super::dot(&w, v);
                col[i] = hij;
                axpy(-hij, v, &mut w);
            }
            let hnext = norm2(&w);
            col[j + 1] = hnext;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = col[j].hypot(col[j + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (col[j] / denom, col[j + 1] / denom)
            };
            col[j] = denom;
            col[j + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g[j + 1] = -s * g[j];
            g[j] *= c;
            h.push(col);
            out.iterations += 1;
            let est = g[j + 1].abs();
            out.residual_history.push(est);
            j += 1;
            if hnext <= 1e-14 * w_norm0.max(f64::MIN_POSITIVE) {
                out.breakdown = true;
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
            if !params.fixed_iterations && est <= target {
                break;
            }
        }

        // Back substitution on the triangularised Hessenberg system.
        let mut y = vec![0.0; j];
        for i in (0..j).rev() {
            let mut s = g[i];
            for k in i + 1..j {
                s -= h[k][i] * y[k];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        if params.flexible {
            for (yi, z) in y.iter().zip(&zs) {
                axpy(*yi, z, x);
            }
        } else {
            let mut u = vec![0.0; n];
            for (yi, v) in y.iter().zip(&basis) {
                axpy(*yi, v, &mut u);
            }
            let mut z = vec![0.0; n];
            apply_pc(&u, &mut z)?;
            out.preconditioner_applications += 1;
            axpy(1.0, &z, x);
        }

        apply_a(x, &mut tmp)?;
        for i in 0..n {
            r[i] = b[i] - tmp[i];
        }
        beta = norm2(&r);
        out.final_residual = beta;
        if let Some(last) = out.residual_history.last_mut() {
            *last = beta;
        }

        if params.fixed_iterations {
            if out.iterations >= params.max_iters || out.breakdown || beta == 0.0 {
                out.converged = true;
                return Ok(out);
            }
        } else if beta <= target || (out.breakdown && beta <= target.max(1e-13 * r0)) {
            out.converged = true;
            return Ok(out);
        }
        if out.breakdown || out.iterations >= params.max_iters || beta == 0.0 {
            return Ok(out);
        }
    }
}
