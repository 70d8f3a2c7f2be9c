use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operator must contain at least one Kraus matrix")]
    EmptyOperator,
    #[error("all Kraus matrices must share the same shape: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("operator is identically zero; size and balance quantities are undefined")]
    ZeroOperator,
    #[error("input contains a non-finite entry")]
    NonFinite,
    #[error("entries must be non-negative")]
    NegativeEntry,
    #[error("dense form needs {needed} entries, budget is {budget}; use the implicit interface")]
    SizeBudgetExceeded { needed: usize, budget: usize },
    #[error("singular value iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("conductance brute force limited to m+n <= {limit}, instance has {got} vertices")]
    ConductanceTooLarge { limit: usize, got: usize },
    #[error("{0}")]
    PreconditionViolated(String),
    #[error("divergence detected at iteration {iter}: l2-error grew from {before:.6e} to {after:.6e} after step halving")]
    Diverged { iter: usize, before: f64, after: f64 },
    #[error("map is numerically singular (min eigenvalue {min_eig:.3e}); instance likely admits no scaling")]
    SingularMap { min_eig: f64 },
    #[error("no scaling exists: {0}")]
    NoScaling(String),
    #[error("gap certificate does not apply: {0}")]
    CertificateRefused(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
