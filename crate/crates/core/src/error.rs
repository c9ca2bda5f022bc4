use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{kind} id {id} out of range (table has {size} entries)")]
    Lookup {
        kind: &'static str,
        id: usize,
        size: usize,
    },

    #[error("infeasible alignment: {frames} frames cannot cover {tokens} tokens")]
    InfeasibleAlignment { frames: usize, tokens: usize },

    #[error("missing SSL features for utterance {utterance} (expected {path})")]
    MissingFeatures { utterance: String, path: PathBuf },

    #[error("non-finite loss term `{0}`")]
    NonFinite(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("corrupt record {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
