use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("denominator is not positive definite after ridge {ridge:e}")]
    SingularDenominator { ridge: f64 },

    #[error("scatter matrix is singular after ridge")]
    SingularScatter,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("label error: {0}")]
    Label(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient pairs: {0}")]
    InsufficientPairs(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("all samples coincide; RBF bandwidth is undefined")]
    DegenerateBandwidth,

    #[error("nothing to evaluate: {0}")]
    EmptyEval(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category, used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Shape(_)
            | Error::Parse { .. }
            | Error::Label(_)
            | Error::EmptyEval(_)
            | Error::TooLarge(_)
            | Error::Io { .. } => ErrorKind::Data,
            Error::InvalidMatrix(_)
            | Error::SingularDenominator { .. }
            | Error::SingularScatter
            | Error::InsufficientPairs(_)
            | Error::DegenerateBandwidth => ErrorKind::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
