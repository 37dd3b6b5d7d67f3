use std::path::PathBuf;

/// Errors raised anywhere in the synthesis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller supplied an argument outside an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// A numerical precondition failed at runtime (singular or indefinite matrix).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An iterative computation did not reach its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A scenario violates one of its structural invariants.
    #[error("invalid scenario: {0}")]
    Invariant(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Calibration rollouts never reached a waypoint.
    #[error("calibration failed: no arrivals recorded at waypoint {waypoint}")]
    Calibration { waypoint: usize },

    /// A strategy query asked for more than the front can deliver.
    #[error("infeasible query: {query} (achievable bound {bound})")]
    Infeasible { query: String, bound: f64 },

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
