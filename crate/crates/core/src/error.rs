use thiserror::Error;

/// Errors produced by the boosting toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate distribution: every entry is -inf")]
    DegenerateDistribution,

    #[error("support mismatch: token {token} has zero probability under a negatively weighted expert")]
    SupportMismatch { token: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("context of {len} tokens exceeds maximum context {max}")]
    ContextTooLong { len: usize, max: usize },

    #[error("empty context")]
    EmptyContext,

    #[error("token id {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corpus of {len} tokens is too short; need at least {needed}")]
    CorpusTooShort { len: usize, needed: usize },

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("numerical guard tripped: {0}")]
    NumericalGuard(String),

    #[error("malformed parameter file: {0}")]
    Format(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for this error: 2 input contract, 3 backend, 4 numerical guard.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Backend(_) => 3,
            Error::NumericalGuard(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
