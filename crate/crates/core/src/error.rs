use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Validation,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("spot ids missing from coordinate file: {}", .0.join(", "))]
    Alignment(Vec<String>),

    #[error("filtering removed every {0}")]
    EmptyResult(&'static str),

    #[error("spot {spot} has zero total count; filter spots before computing size factors")]
    ZeroTotal { spot: String },

    #[error("degenerate geometry: all pairwise distances are zero")]
    DegenerateGeometry,

    #[error("Cholesky factorization failed for length-scale {length_scale} (jitter up to {jitter:e})")]
    Cholesky { length_scale: f64, jitter: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{0}")]
    Undefined(String),

    #[error("chain {chain}: {source}")]
    Chain {
        chain: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {iteration}, gene {gene}: {source}")]
    Sampler {
        iteration: usize,
        gene: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Alignment(_)
            | Error::EmptyResult(_)
            | Error::ZeroTotal { .. }
            | Error::DegenerateGeometry => ErrorCategory::Validation,
            Error::Cholesky { .. } | Error::NonFinite(_) | Error::Undefined(_) => {
                ErrorCategory::Numerical
            }
            Error::Chain { source, .. } | Error::Sampler { source, .. } => source.category(),
        }
    }
}
