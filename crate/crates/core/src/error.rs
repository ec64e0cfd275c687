use thiserror::Error;

/// Errors raised by mesh construction, assembly and the time-stepping solvers.
#[derive(Debug, Error)]
pub enum HjbError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error(
        "monotonicity unobtainable: mesh is not strictly acute (sin_theta = {sin_theta:.6e} \
         on element {element}, nodes {node_a} and {node_b})"
    )]
    NotAcute {
        sin_theta: f64,
        element: usize,
        node_a: usize,
        node_b: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("monotonicity certification failed: {0}")]
    Certification(String),

    #[error("policy iteration did not converge after {iterations} iterations (last residual {last:.3e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        residuals: Vec<f64>,
    },

    #[error("M-matrix violation: {0}")]
    MMatrix(String),

    #[error("linear solver failed: {message} (residual {residual:.3e})")]
    LinearSolver { message: String, residual: f64 },

    #[error("query error: {0}")]
    Query(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HjbError>;
