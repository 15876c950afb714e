//! Linear-algebra and transform kernels shared by the rest of the crate.
//!
//! Everything here operates on plain slices of `f64` or [`C64`]. Spatial
//! operators are stored as [`SparseMatrix`] (row-compressed), small dense
//! systems go through [`DenseLu`], and the time-axis transforms of the
//! circulant preconditioner live in [`WeightedDftPlan`].

mod blocks;
mod dense;
mod fft;
pub mod krylov;
mod sparse;

pub use blocks::{complex_proxy_solve, BlockMethod, ProxyBlock, RealBlock};
pub use dense::{DenseLu, DenseMatrix};
pub use fft::{fft_forward, fft_inverse, WeightedDftPlan};
pub use sparse::SparseMatrix;

use thiserror::Error;

pub type C64 = num_complex::Complex<f64>;

/// Relative pivot threshold below which a dense factorisation is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("singular block: pivot {pivot:e} below {threshold:e} of max entry {max_entry:e}")]
    SingularBlock {
        pivot: f64,
        threshold: f64,
        max_entry: f64,
    },
    #[error("inner solver reached {iterations} iterations with residual {residual:e} (target {target:e})")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        target: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index ({row}, {col}) outside a {nrows}x{ncols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}
