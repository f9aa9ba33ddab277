use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model was evaluated outside its declared domain.
    #[error("domain error: {what} = {value} (limit {limit})")]
    Domain {
        what: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    /// Strict feasibility (lambda > 0, J theta - d < 0) was violated.
    #[error("infeasible point: {0}")]
    Infeasible(String),

    /// Lanczos beta underflowed while the residual is still above tolerance.
    #[error("MINRES breakdown at iteration {iteration}, relative residual {relres:.3e}")]
    Breakdown { iteration: usize, relres: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}
