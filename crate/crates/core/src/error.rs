use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or shape argument lies outside the domain of the operation.
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// A channel model or covariance matrix violates its invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Non-finite intermediate values, failed factorizations and the like.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// Waterfilling on `G = 0`: every feasible covariance is optimal.
    #[error("degenerate objective: gain matrix is identically zero")]
    DegenerateObjective,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Attach context (an iteration index, an SNR point) to solver errors.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
            Error::SolverFailure(m) => Error::SolverFailure(format!("{ctx}: {m}")),
            Error::ParameterDomain(m) => Error::ParameterDomain(format!("{ctx}: {m}")),
            Error::InvalidModel(m) => Error::InvalidModel(format!("{ctx}: {m}")),
            other => other,
        }
    }
}
