use thiserror::Error;

/// Error taxonomy used across the solver.
///
/// * `InvalidArgument` — caller errors: bad sizes, non-positive time step,
///   mismatched meshes, malformed specifications.
/// * `NumericFailure` — an iteration did not converge (line search exhausted,
///   factorization failed, root find diverged); always carries the iteration
///   context in the message.
/// * `DomainError` — a state left the domain of a model function (e.g. χ used
///   in a logarithm outside (0,1), c outside the admissible range).
/// * `ConsistencyFailure` — a structural invariant was violated at run time;
///   carries the invariant name and the violating magnitude.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure in {context}: {msg}")]
    NumericFailure { context: &'static str, msg: String },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("invariant '{invariant}' violated: {witness}")]
    ConsistencyFailure {
        invariant: &'static str,
        witness: String,
    },
}

impl SolverError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SolverError::InvalidArgument(msg.into())
    }

    pub fn numeric(context: &'static str, msg: impl Into<String>) -> Self {
        SolverError::NumericFailure {
            context,
            msg: msg.into(),
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        SolverError::DomainError(msg.into())
    }

    pub fn inconsistent(invariant: &'static str, witness: impl Into<String>) -> Self {
        SolverError::ConsistencyFailure {
            invariant,
            witness: witness.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SolverError>;
