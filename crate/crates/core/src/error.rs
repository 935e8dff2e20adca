use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, weights).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An exhaustive reference routine was asked to enumerate too much.
    #[error("enumeration guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("incompatible {what}: found version {found}, expected {expected}")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
