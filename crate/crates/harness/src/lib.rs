//! Experiment harness: configuration, training loops, evaluation, beam
//! sweeps and gradient verification on top of `o1-core`.

pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod step;
pub mod sweep;
pub mod train;

use o1_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl HarnessError {
    /// Process exit code: 1 usage or configuration, 2 verification, 3 I/O or parse.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Verification(_) => 2,
            HarnessError::Io(_) => 3,
            HarnessError::Core(e) => match e {
                CoreError::Io { .. } | CoreError::Parse { .. } | CoreError::Version { .. } => 3,
                CoreError::Contract(_) | CoreError::GuardExceeded(_) => 1,
            },
        }
    }
}

pub(crate) fn io_error(path: &std::path::Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}
