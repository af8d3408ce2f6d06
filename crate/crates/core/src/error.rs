use thiserror::Error;

use crate::distributions::MixtureGamma;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario or distribution definition that cannot be used.
    #[error("config error: {0}")]
    Config(String),

    /// A state-machine transition requested from the wrong phase.
    #[error("state error: {0}")]
    State(String),

    /// A simulation invariant failed; carries enough context to find the tick.
    #[error("invariant violated at tick {tick} (taxi {taxi}): {what}")]
    Invariant { tick: u64, taxi: u64, what: String },

    #[error("projection error: {0}")]
    Projection(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    /// No start of the simplex search met the convergence test; the best
    /// parameters seen are still returned for inspection.
    #[error("fit did not converge after {evaluations} evaluations (best log-likelihood {best_log_likelihood})")]
    NotConverged {
        best: MixtureGamma,
        best_log_likelihood: f64,
        evaluations: usize,
    },

    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
