use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt input: {0}")]
    CorruptInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("spec error: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[cfg(feature = "hdf5")]
    #[error("{path}: {source}")]
    Hdf5 {
        path: PathBuf,
        #[source]
        source: hdf5::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by the command line to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::Unsupported(_) | Error::State(_) => {
                ErrorKind::InvalidArgument
            }
            Error::CorruptInput(_) => ErrorKind::CorruptInput,
            Error::Io { .. } => ErrorKind::Io,
            #[cfg(feature = "hdf5")]
            Error::Hdf5 { .. } => ErrorKind::Io,
            Error::Spec(_) | Error::Config(_) => ErrorKind::Spec,
            Error::Numeric(_) => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidArgument,
    CorruptInput,
    Io,
    Spec,
    Numeric,
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
