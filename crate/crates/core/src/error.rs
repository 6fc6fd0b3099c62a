use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A per-study effect estimate could not be formed (zero cell without correction).
    #[error(
        "effect estimate undefined for study {study}: zero cell with correction policy `{policy}`"
    )]
    UndefinedEstimate { study: String, policy: &'static str },

    #[error("non-finite likelihood contribution from study {study} ({detail})")]
    Numeric { study: usize, detail: String },

    #[error("objective is not finite at any starting point")]
    Initialization,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
