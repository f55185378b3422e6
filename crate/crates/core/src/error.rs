use thiserror::Error;

use crate::solvers::SolverError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field size mismatch: expected {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("{context}: {source}")]
    Solver {
        context: &'static str,
        #[source]
        source: SolverError,
    },

    #[error("density {value:.17e} in cell {cell} leaves [{lower}, {upper}]")]
    MaxPrincipleViolation {
        cell: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("initial density {value} in cell {cell} outside [{lower}, {upper}]")]
    InvalidInitialDensity {
        cell: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid fluid parameters: {0}")]
    InvalidFluid(String),

    #[error("invalid scheme parameters: {0}")]
    InvalidScheme(String),

    #[error("stability hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

impl Error {
    pub(crate) fn solver(context: &'static str) -> impl FnOnce(SolverError) -> Error {
        move |source| Error::Solver { context, source }
    }
}
