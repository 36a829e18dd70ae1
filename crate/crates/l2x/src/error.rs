use std::path::PathBuf;

use crate::model_file::ModelError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] l2x_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Model {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("{0}")]
    Usage(String),
}

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const NUMERIC: u8 = 3;
    pub const IO: u8 = 4;
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use l2x_core::Error as C;
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::Core(C::Parameter(_) | C::Dimension { .. } | C::Axis { .. } | C::Resource(_)) => exit::USAGE,
            Error::Core(C::NonFinite { .. } | C::Domain { .. } | C::Contract(_)) => exit::NUMERIC,
            Error::Core(C::Data(_)) => exit::IO,
            Error::Io { .. } | Error::Parse { .. } | Error::Model { .. } => exit::IO,
        }
    }
}
