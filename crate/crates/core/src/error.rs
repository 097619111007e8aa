use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("tet {tet} references vertex {vertex} but the mesh has {count} vertices")]
    IndexOutOfRange {
        tet: usize,
        vertex: usize,
        count: usize,
    },

    #[error("inverted or degenerate elements: {0:?}")]
    InvertedElements(Vec<usize>),

    #[error("surface is not a closed 2-manifold: {0}")]
    NonManifold(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("matrix is not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("requested {requested} modes but only {available} are available")]
    RankDeficient { requested: usize, available: usize },

    #[error("dense oracle limited to {limit} degrees of freedom, got {size}")]
    SizeCap { size: usize, limit: usize },

    #[error("line search failed after {0} halvings")]
    LineSearch(usize),

    #[error("malformed container: {0}")]
    Container(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
