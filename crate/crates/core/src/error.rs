use std::path::PathBuf;

use thiserror::Error;

use crate::solver::SolveResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid geometry constants: {0}")]
    InvalidGeometry(String),

    #[error("adaptive quadrature did not converge (estimate {estimate:e}, error estimate {error:e})")]
    Quadrature { estimate: f64, error: f64 },

    /// The iteration budget ran out. The best iterate found so far is attached.
    #[error("solver stopped after {iterations} iterations with residual {residual:e}")]
    MaxIterExceeded {
        iterations: usize,
        residual: f64,
        best: Box<SolveResult>,
    },

    #[error("Neumann source violates compatibility: integral {integral:e} vs scale {scale:e}")]
    IncompatibleSource { integral: f64, scale: f64 },

    #[error("singular coefficient: {0}")]
    SingularCoefficient(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
