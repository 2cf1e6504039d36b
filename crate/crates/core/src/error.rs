use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),

    #[error("zeta = {zeta} violates the {side} bound {bound}: the CAR precision is not positive definite")]
    ZetaOutOfBounds {
        zeta: f64,
        bound: f64,
        side: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("{what} did not converge after {iterations} iterations (trace: {trace:?})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        trace: Vec<f64>,
    },

    #[error("need at least {need} posterior draws, got {got}")]
    InsufficientDraws { got: usize, need: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/input problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Graph(_)
            | Error::Dimension(_)
            | Error::Config(_)
            | Error::Inadmissible(_)
            | Error::ZetaOutOfBounds { .. }
            | Error::InsufficientDraws { .. } => 2,
            Error::Domain(_) | Error::NotPositiveDefinite(_) | Error::NonConvergence { .. } => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
