use thiserror::Error;

pub type Result<T, E = QstError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QstError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The ansatz collapsed to a point that does not define a density matrix.
    #[error("degenerate ansatz: {0}")]
    DegenerateAnsatz(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    /// Gradient norm vanished; callers treat this as convergence.
    #[error("zero gradient")]
    ZeroGradient,

    #[error("informationally incomplete operator set: numerical rank {rank} < {required}")]
    InformationallyIncomplete { rank: usize, required: usize },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("non-monotone likelihood at iteration {iteration}: {previous} -> {current}")]
    LikelihoodDecrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl QstError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        QstError::InvalidArgument(msg.into())
    }
}
