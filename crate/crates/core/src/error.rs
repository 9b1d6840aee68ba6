use std::path::PathBuf;

use thiserror::Error;

use crate::sampler::PosteriorDraws;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cholesky decomposition failed: {0}")]
    Decomposition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite log density or gradient")]
    NonFinite,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate observation key at {path}:{line}: {key}")]
    DuplicateKey {
        path: PathBuf,
        line: u64,
        key: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("{} chain(s) failed: {}", failures.len(), failures.iter().map(|(c, m)| format!("chain {c}: {m}")).collect::<Vec<_>>().join("; "))]
    ChainsFailed {
        completed: Box<PosteriorDraws<Vec<f64>>>,
        failures: Vec<(usize, String)>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
