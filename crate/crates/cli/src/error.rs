use std::path::PathBuf;

use hyperlearn_core::{ErrorClass, schedule::RunAbort};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] hyperlearn_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Aborted(Box<RunAbort>),
    #[error("gradient check failed (max relative error {0:.3e})")]
    GradCheck(f64),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Self::Config(_) => ErrorClass::Validation,
            Self::Core(e) => e.class(),
            Self::Aborted(a) => a.error.class(),
            Self::Io { .. } | Self::Format { .. } => ErrorClass::Io,
            Self::GradCheck(_) => ErrorClass::Numeric,
        }
    }

    /// Process exit status: 1 validation, 2 numeric, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self.class() {
            ErrorClass::Validation => 1,
            ErrorClass::Numeric => 2,
            ErrorClass::Io => 3,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
