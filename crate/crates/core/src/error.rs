use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller supplied inconsistent inputs (unbound variables, short paths, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    /// A symbolic expansion grew past its configured term cap.
    #[error("term count {terms} exceeds cap {cap} at {stage}")]
    Resource { stage: String, terms: usize, cap: usize },

    #[error("unsupported functional: {0}")]
    Unsupported(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    /// Invalid experiment configuration; `field` names the offending entry.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
