use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a model invariant.
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// A caller supplied arguments that do not fit together.
    #[error("bad argument: {0}")]
    Argument(String),

    /// The request exceeds a size cap of one of the dense solvers.
    #[error("{what} supports N <= {cap}, got N = {n}")]
    Capability { what: &'static str, n: usize, cap: usize },

    /// Time integration could not proceed.
    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    /// The steady state is not unique.
    #[error("degenerate steady state: {0}")]
    Degenerate(String),

    /// A root finder or linear solve did not produce an acceptable answer.
    #[error("solver failed: {0}")]
    Solver(String),

    /// Per-trajectory failure inside an ensemble.
    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), reason: reason.into() }
    }

    /// Process exit code: 1 validation, 2 capability, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Argument(_) | Error::Parse(_) | Error::Io(_) => 1,
            Error::Capability { .. } => 2,
            Error::Integration { .. } | Error::Degenerate(_) | Error::Solver(_) => 3,
            Error::Trajectory { source, .. } => source.exit_code(),
        }
    }
}
