//! Error type shared by all solver components.

/// Crate-wide error enum. Variants mirror the failure classes of the public
/// operations: invalid configuration, structural shape mismatches, operations
/// a model does not support, resource limits, solver breakdowns and rejected
/// time steps.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("ill-posed input: {0}")]
    IllPosed(String),

    #[error("solver failure: {message} (residual {residual:.3e})")]
    Solver { message: String, residual: f64 },

    #[error("iteration did not contract: {0}")]
    NonContraction(String),

    #[error("step rejected: {reason}; advisory dt = {advisory_dt:.3e}")]
    StepRejected { reason: String, advisory_dt: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
