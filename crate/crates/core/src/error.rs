use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("non-finite {what} ({location})")]
    NonFinite { what: &'static str, location: String },

    #[error("ratio undefined for corruption `{corruption}`: {reason}")]
    UndefinedRatio { corruption: String, reason: &'static str },

    #[error("missing class {0} in few-shot target set")]
    MissingClass(usize),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse grouping used by the command line for exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::Unknown { .. } => ErrorKind::Config,
            Error::NonFinite { .. } | Error::UndefinedRatio { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
