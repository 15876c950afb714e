//! Spatial block solvers.
//!
//! A [`RealBlock`] is the implicit system of one serial timestep. A
//! [`ProxyBlock`] is one frequency block `(λ₁ M + λ₂ A)` of the circulant
//! preconditioner, stored as its `2n × 2n` real embedding
//!
//! ```text
//! [ Re  -Im ] [ x_re ]   [ b_re ]
//! [ Im   Re ] [ x_im ] = [ b_im ]
//! ```
//!
//! with `Re = Re(λ₁) M + Re(λ₂) A` and `Im = Im(λ₁) M + Im(λ₂) A`.

use serde::{Deserialize, Serialize};

use super::krylov::{gmres, GmresParams};
use super::{DenseLu, NumericsError, SparseMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BlockMethod {
    /// Factorise once, then every solve is a pair of triangular sweeps.
    DenseLu,
    /// Jacobi-preconditioned GMRES to relative tolerance `tol`.
    Gmres {
        tol: f64,
        max_iters: usize,
        restart: usize,
    },
    /// Exactly `iters` Jacobi-preconditioned GMRES iterations.
    FixedIterations { iters: usize },
}

impl Default for BlockMethod {
    fn default() -> Self {
        BlockMethod::DenseLu
    }
}

impl BlockMethod {
    fn gmres_params(&self) -> Option<GmresParams> {
        match *self {
            BlockMethod::DenseLu => None,
            BlockMethod::Gmres {
                tol,
                max_iters,
                restart,
            } => Some(GmresParams {
                rtol: tol,
                atol: 0.0,
                max_iters,
                restart,
                flexible: false,
                fixed_iterations: false,
            }),
            BlockMethod::FixedIterations { iters } => Some(GmresParams {
                rtol: 0.0,
                atol: 0.0,
                max_iters: iters,
                restart: iters.max(1),
                flexible: false,
                fixed_iterations: true,
            }),
        }
    }
}

fn check_square(m: &SparseMatrix, n: usize) -> Result<(), NumericsError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(NumericsError::DimensionMismatch {
            expected: n,
            got: m.nrows().max(m.ncols()),
        });
    }
    Ok(())
}

fn iterative_solve(
    matrix: &SparseMatrix,
    precondition: impl Fn(&[f64], &mut [f64]),
    params: &GmresParams,
    rhs: &[f64],
) -> Result<(Vec<f64>, usize), NumericsError> {
    let mut x = vec![0.0; rhs.len()];
    let out = gmres::<std::convert::Infallible, _, _>(
        |v, y| {
            matrix.matvec_into(v, y);
            Ok(())
        },
        |r, z| {
            precondition(r, z);
            Ok(())
        },
        rhs,
        &mut x,
        params,
    )
    .unwrap_or_else(|e| match e {});
    if !out.converged {
        return Err(NumericsError::MaxIterations {
            iterations: out.iterations,
            residual: out.final_residual,
            target: out.target,
        });
    }
    Ok((x, out.iterations))
}

/// Real-valued block `A x = b`, factorised or iterated according to the method.
#[derive(Debug, Clone)]
pub struct RealBlock {
    matrix: SparseMatrix,
    method: BlockMethod,
    lu: Option<DenseLu>,
    inv_diag: Vec<f64>,
}

impl RealBlock {
    pub fn new(matrix: SparseMatrix, method: BlockMethod) -> Result<Self, NumericsError> {
        check_square(&matrix, matrix.nrows())?;
        let lu = match method {
            BlockMethod::DenseLu => Some(DenseLu::factor(&matrix.to_dense())?),
            _ => None,
        };
        let inv_diag = matrix
            .diagonal()
            .into_iter()
            .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Ok(Self {
            matrix,
            method,
            lu,
            inv_diag,
        })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Returns the solution and the Krylov iteration count (1 for LU).
    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, usize), NumericsError> {
        if rhs.len() != self.matrix.nrows() {
            return Err(NumericsError::DimensionMismatch {
                expected: self.matrix.nrows(),
                got: rhs.len(),
            });
        }
        if let Some(lu) = &self.lu {
            return Ok((lu.solve(rhs), 1));
        }
        let params = self.method.gmres_params().expect("iterative method");
        iterative_solve(
            &self.matrix,
            |r, z| {
                for i in 0..r.len() {
                    z[i] = r[i] * self.inv_diag[i];
                }
            },
            &params,
            rhs,
        )
    }
}

/// One complex-valued block `(λ₁ M + λ₂ A)` held as its real embedding.
#[derive(Debug, Clone)]
pub struct ProxyBlock {
    n: usize,
    embedding: SparseMatrix,
    method: BlockMethod,
    lu: Option<DenseLu>,
    /// Inverse of the complex diagonal, `1 / (a + ib)`, stored as (re, im).
    inv_diag: Vec<(f64, f64)>,
}

impl ProxyBlock {
    pub fn new(
        a: &SparseMatrix,
        mass: &SparseMatrix,
        lambda1: C64,
        lambda2: C64,
        method: BlockMethod,
    ) -> Result<Self, NumericsError> {
        let n = a.nrows();
        check_square(a, n)?;
        check_square(mass, n)?;
        if lambda1 == C64::new(0.0, 0.0) && lambda2 == C64::new(0.0, 0.0) {
            return Err(NumericsError::InvalidArgument(
                "block coefficients are both zero".into(),
            ));
        }
        let re = SparseMatrix::linear_combination(lambda1.re, mass, lambda2.re, a);
        let im = SparseMatrix::linear_combination(lambda1.im, mass, lambda2.im, a);
        let mut trip = Vec::with_capacity(2 * (re.nnz() + im.nnz()));
        for i in 0..n {
            for (j, v) in re.row(i) {
                trip.push((i, j, v));
                trip.push((n + i, n + j, v));
            }
            for (j, v) in im.row(i) {
                trip.push((i, n + j, -v));
                trip.push((n + i, j, v));
            }
        }
        let embedding = SparseMatrix::from_triplets(2 * n, 2 * n, &trip)?;
        let lu = match method {
            BlockMethod::DenseLu => Some(DenseLu::factor(&embedding.to_dense())?),
            _ => None,
        };
        let inv_diag = re
            .diagonal()
            .into_iter()
            .zip(im.diagonal())
            .map(|(a, b)| {
                let d = a * a + b * b;
                if d > 0.0 {
                    (a / d, -b / d)
                } else {
                    (1.0, 0.0)
                }
            })
            .collect();
        Ok(Self {
            n,
            embedding,
            method,
            lu,
            inv_diag,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn embedding(&self) -> &SparseMatrix {
        &self.embedding
    }

    /// Solves for a complex right-hand side; returns the solution and the
    /// Krylov iteration count (1 for LU).
    pub fn solve(&self, rhs: &[C64]) -> Result<(Vec<C64>, usize), NumericsError> {
        let n = self.n;
        if rhs.len() != n {
            return Err(NumericsError::DimensionMismatch {
                expected: n,
                got: rhs.len(),
            });
        }
        let mut split = vec![0.0; 2 * n];
        for (i, z) in rhs.iter().enumerate() {
            split[i] = z.re;
            split[n + i] = z.im;
        }
        let (x, its) = if let Some(lu) = &self.lu {
            lu.solve_in_place(&mut split);
            (split, 1)
        } else {
            let params = self.method.gmres_params().expect("iterative method");
            iterative_solve(
                &self.embedding,
                |r, z| {
                    for i in 0..n {
                        let (dr, di) = self.inv_diag[i];
                        let (rr, ri) = (r[i], r[n + i]);
                        z[i] = dr * rr - di * ri;
                        z[n + i] = di * rr + dr * ri;
                    }
                },
                &params,
                &split,
            )?
        };
        let out = (0..n).map(|i| C64::new(x[i], x[n + i])).collect();
        Ok((out, its))
    }
}

/// Solves `(λ₁ M + λ₂ A) x = rhs` through the real embedding.
pub fn complex_proxy_solve(
    a: &SparseMatrix,
    mass: &SparseMatrix,
    lambda1: C64,
    lambda2: C64,
    rhs: &[C64],
    method: BlockMethod,
) -> Result<Vec<C64>, NumericsError> {
    ProxyBlock::new(a, mass, lambda1, lambda2, method)?
        .solve(rhs)
        .map(|(x, _)| x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense(n: usize, rng: &mut ChaCha8Rng, shift: f64) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                t.push((i, j, if i == j { v + shift } else { v }));
            }
        }
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    /// Native complex LU from nalgebra, independent of the real embedding.
    fn complex_oracle(a: &SparseMatrix, m: &SparseMatrix, l1: C64, l2: C64, rhs: &[C64]) -> Vec<C64> {
        let n = a.nrows();
        let mat = DMatrix::from_fn(n, n, |i, j| l1 * m.get(i, j) + l2 * a.get(i, j));
        let b = nalgebra::DVector::from_column_slice(rhs);
        mat.lu().solve(&b).unwrap().iter().copied().collect()
    }

    fn rel_err(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn identity_system_returns_rhs() {
        let n = 5;
        let a = random_dense(n, &mut ChaCha8Rng::seed_from_u64(1), 0.0);
        let rhs: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0 - i as f64)).collect();
        let x = complex_proxy_solve(
            &a,
            &SparseMatrix::identity(n),
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            &rhs,
            BlockMethod::DenseLu,
        )
        .unwrap();
        assert!(rel_err(&x, &rhs) < 1e-15);
    }

    #[test]
    fn real_coefficients_match_real_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6;
        let a = random_dense(n, &mut rng, 3.0);
        let m = SparseMatrix::identity(n);
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let crhs: Vec<C64> = rhs.iter().map(|&v| C64::new(v, 0.0)).collect();
        let x = complex_proxy_solve(&a, &m, C64::new(2.0, 0.0), C64::new(0.5, 0.0), &crhs, BlockMethod::DenseLu)
            .unwrap();
        let real = RealBlock::new(SparseMatrix::linear_combination(2.0, &m, 0.5, &a), BlockMethod::DenseLu)
            .unwrap()
            .solve(&rhs)
            .unwrap()
            .0;
        for (z, r) in x.iter().zip(&real) {
            assert!(z.im.abs() <= 1e-12);
            assert!((z.re - r).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn random_4x4_matches_native_complex_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_dense(4, &mut rng, 0.0);
        let m = random_dense(4, &mut rng, 2.0);
        let (l1, l2) = (C64::new(1.0, 2.0), C64::new(3.0, -1.0));
        let rhs: Vec<C64> = (0..4).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let x = complex_proxy_solve(&a, &m, l1, l2, &rhs, BlockMethod::DenseLu).unwrap();
        assert!(rel_err(&x, &complex_oracle(&a, &m, l1, l2, &rhs)) < 1e-10);
    }

    #[test]
    fn embedding_matches_native_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1, 3, 8, 17, 32] {
            let a = random_dense(n, &mut rng, 0.0);
            let m = random_dense(n, &mut rng, n as f64);
            let l1 = C64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let l2 = C64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let rhs: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let x = complex_proxy_solve(&a, &m, l1, l2, &rhs, BlockMethod::DenseLu).unwrap();
            assert!(rel_err(&x, &complex_oracle(&a, &m, l1, l2, &rhs)) < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn iterative_block_reaches_tolerance() {
        let n = 30;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        let k = SparseMatrix::from_triplets(n, n, &t).unwrap();
        let m = SparseMatrix::identity(n);
        let (l1, l2) = (C64::new(1.0, 3.0), C64::new(0.5, 0.1));
        let rhs: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), 0.5)).collect();
        let block = ProxyBlock::new(&k, &m, l1, l2, BlockMethod::Gmres { tol: 1e-10, max_iters: 200, restart: 50 }).unwrap();
        let (x, its) = block.solve(&rhs).unwrap();
        assert!(its > 1);
        assert!(rel_err(&x, &complex_oracle(&k, &m, l1, l2, &rhs)) < 1e-8);

        let stingy = ProxyBlock::new(&k, &m, l1, l2, BlockMethod::Gmres { tol: 1e-14, max_iters: 2, restart: 2 }).unwrap();
        assert!(matches!(stingy.solve(&rhs), Err(NumericsError::MaxIterations { .. })));

        let fixed = ProxyBlock::new(&k, &m, l1, l2, BlockMethod::FixedIterations { iters: 4 }).unwrap();
        assert_eq!(fixed.solve(&rhs).unwrap().1, 4);
    }

    #[test]
    fn singular_embedding_reported() {
        let n = 3;
        let zero = SparseMatrix::zeros(n, n);
        let m = SparseMatrix::identity(n);
        let rhs = vec![C64::new(1.0, 0.0); n];
        let err = complex_proxy_solve(&zero, &m, C64::new(0.0, 0.0), C64::new(1.0, 0.0), &rhs, BlockMethod::DenseLu);
        assert!(matches!(err, Err(NumericsError::SingularBlock { .. })));
    }
}
