use super::{NumericsError, PIVOT_TOLERANCE};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "dense matrix data length");
        Self { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        self.data
            .chunks_exact(self.ncols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.ncols, rhs.nrows);
        let mut out = Self::zeros(self.nrows, rhs.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.ncols {
                    out.data[i * rhs.ncols + j] += a * rhs.get(k, j);
                }
            }
        }
        out
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &Self) -> Self {
        let (r, c) = (self.nrows * rhs.nrows, self.ncols * rhs.ncols);
        let mut out = Self::zeros(r, c);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                let a = self.get(i, j);
                if a == 0.0 {
                    continue;
                }
                for p in 0..rhs.nrows {
                    for q in 0..rhs.ncols {
                        out.set(i * rhs.nrows + p, j * rhs.ncols + q, a * rhs.get(p, q));
                    }
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// LU factorisation with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    /// Factorises `a`; fails with `SingularBlock` when a pivot falls below
    /// [`PIVOT_TOLERANCE`] times the largest entry of `a`.
    pub fn factor(a: &DenseMatrix) -> Result<Self, NumericsError> {
        if a.nrows() != a.ncols() {
            return Err(NumericsError::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let n = a.nrows();
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let max_entry = a.max_abs();
        let threshold = PIVOT_TOLERANCE * max_entry;
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv <= threshold || pv == 0.0 {
                return Err(NumericsError::SingularBlock {
                    pivot: pv,
                    threshold: PIVOT_TOLERANCE,
                    max_entry,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                if f == 0.0 {
                    continue;
                }
                lu[i * n + k] = f;
                let (upper, lower) = lu.split_at_mut(i * n);
                let row_k = &upper[k * n + k + 1..k * n + n];
                let row_i = &mut lower[k + 1..n];
                for (x, y) in row_i.iter_mut().zip(row_k) {
                    *x -= f * y;
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n, "LU solve: rhs length");
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(l, y)| l * y).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: f64 = row.iter().zip(&x[i + 1..]).map(|(u, y)| u * y).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
