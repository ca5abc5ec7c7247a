use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: line {line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: line {line}: timestamp {timestamp} does not increase on the previous row", path.display())]
    NonMonotonic {
        path: PathBuf,
        line: usize,
        timestamp: i64,
    },

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("episode already finished at t={0}")]
    EpisodeDone(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
