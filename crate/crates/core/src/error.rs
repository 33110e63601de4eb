use thiserror::Error;

/// Errors raised by grids, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("characteristic through (eta={eta}, phi={phi}) does not reach eta'={target}")]
    Unreachable { eta: f64, phi: f64, target: f64 },

    #[error("no turning point: |E| = {energy} < 1, the characteristic reaches eta = 0")]
    NoTurning { energy: f64 },

    #[error("grazing direction: sin(phi) = 0 at phi = {phi}")]
    Grazing { phi: f64 },

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    Iteration { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("residual below {floor:e} on the fit window; decay too fast to fit")]
    Underflow { floor: f64 },

    #[error("property failure: {0}")]
    Property(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
