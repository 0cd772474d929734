use thiserror::Error;

use crate::evidence::EvidenceError;
use crate::memory::MemoryError;

/// Failure reported by an embedder, inducer or guard model backend.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("empty text cannot be embedded")]
    EmptyText,
    #[error("{provider} request failed: {message}")]
    Transport { provider: &'static str, message: String },
    #[error("{provider} returned an unusable response: {message}")]
    BadResponse { provider: &'static str, message: String },
    #[error("missing provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("refresh aborted: {0}")]
    Refresh(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
