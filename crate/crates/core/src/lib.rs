//! ParaDiag-II preconditioning of implicit θ-method all-at-once systems.
//!
//! A window of `nt` θ-method steps is assembled into one space-time system
//! ([`aaos`]), preconditioned by an α-circulant approximation that a
//! weighted FFT block-diagonalises ([`circulant`]), and solved with
//! Richardson, GMRES or Newton–Krylov iterations ([`solvers`]). The
//! [`perfmodel`] module turns iteration counts and timings into speedup
//! estimates.

pub mod aaos;
pub mod circulant;
mod error;
pub mod numerics;
pub mod perfmodel;
pub mod problems;
pub mod solvers;

pub use error::{Error, Result};
