use std::path::PathBuf;

/// Errors raised anywhere in the sensing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("eigendecomposition did not converge after {iterations} iterations (off-diagonal norm {off_norm:e})")]
    Convergence { iterations: usize, off_norm: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("difference coarray has a hole at lag {lag}")]
    CoarrayHole { lag: i64 },

    #[error("too many sources for aperture: M = {m} requires dimension > {m}, have {dim}")]
    TooManySources { m: usize, dim: usize },

    #[error("source count M = {m} is not registered (registered: {registered:?})")]
    Unregistered { m: usize, registered: Vec<usize> },

    #[error("trial {index} failed: {source}")]
    Trial {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("batch format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
