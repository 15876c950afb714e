use super::{DenseMatrix, NumericsError};

/// Real matrix in compressed sparse row form.
///
/// Column indices are strictly increasing within each row; duplicate
/// entries passed to [`SparseMatrix::from_triplets`] are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, NumericsError> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(NumericsError::IndexOutOfBounds {
                    row: i,
                    col: j,
                    nrows,
                    ncols,
                });
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut trip = Vec::new();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                let v = d.get(i, j);
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(d.nrows(), d.ncols(), &trip).expect("indices in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterate over the `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(pos) => self.values[r.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "matvec: input length");
        assert_eq!(y.len(), self.nrows, "matvec: output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// `y += scale * A x`
    pub fn matvec_add(&self, scale: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "matvec: input length");
        assert_eq!(y.len(), self.nrows, "matvec: output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi += scale * acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `a * A + b * B` on the union of the two sparsity patterns.
    pub fn linear_combination(a: f64, lhs: &Self, b: f64, rhs: &Self) -> Self {
        assert_eq!(
            (lhs.nrows, lhs.ncols),
            (rhs.nrows, rhs.ncols),
            "linear_combination: shape mismatch"
        );
        let mut row_ptr = Vec::with_capacity(lhs.nrows + 1);
        let mut col_idx = Vec::with_capacity(lhs.nnz() + rhs.nnz());
        let mut values = Vec::with_capacity(lhs.nnz() + rhs.nnz());
        row_ptr.push(0);
        for i in 0..lhs.nrows {
            let mut p = lhs.row_ptr[i];
            let mut q = rhs.row_ptr[i];
            let (pe, qe) = (lhs.row_ptr[i + 1], rhs.row_ptr[i + 1]);
            while p < pe || q < qe {
                let cp = if p < pe { lhs.col_idx[p] } else { usize::MAX };
                let cq = if q < qe { rhs.col_idx[q] } else { usize::MAX };
                if cp == cq {
                    col_idx.push(cp);
                    values.push(a * lhs.values[p] + b * rhs.values[q]);
                    p += 1;
                    q += 1;
                } else if cp < cq {
                    col_idx.push(cp);
                    values.push(a * lhs.values[p]);
                    p += 1;
                } else {
                    col_idx.push(cq);
                    values.push(b * rhs.values[q]);
                    q += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: lhs.nrows,
            ncols: lhs.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d.set(i, j, v);
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Max-row-sum norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        (0..self.nrows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    /// Checks the structural invariant: strictly increasing columns per row.
    pub fn is_well_formed(&self) -> bool {
        self.row_ptr.len() == self.nrows + 1
            && (0..self.nrows).all(|i| {
                let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
                cols.windows(2).all(|w| w[0] < w[1]) && cols.iter().all(|&c| c < self.ncols)
            })
    }
}
