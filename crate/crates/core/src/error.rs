use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    /// A frequency block of the circulant preconditioner failed.
    #[error("block {k}: {source}")]
    Block { k: usize, source: NumericsError },

    #[error("Newton diverged{}: residual {residual:e} after {iterations} iterations", step_suffix(*.step))]
    NewtonDiverged {
        step: Option<usize>,
        iterations: usize,
        residual: f64,
    },

    #[error("outer solver stopped after {iterations} iterations with residual {residual:e}")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("Krylov breakdown after {iterations} iterations")]
    Breakdown { iterations: usize },

    #[error("division by zero: lambda2[{k}] = 0")]
    DivisionByZero { k: usize },

    #[error("reports describe different runs: {0} vs {1}")]
    MismatchedReports(String, String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn step_suffix(step: Option<usize>) -> String {
    step.map(|s| format!(" at step {s}")).unwrap_or_default()
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
