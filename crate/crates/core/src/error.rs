use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum DoraError {
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("backend error: {0}")]
    Backend(#[from] BackendError),

    #[error("environment error: {0}")]
    Env(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Failures raised by a policy backend.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("malformed response: {0}")]
    Protocol(String),

    #[error("mock script exhausted after {consumed} call(s)")]
    ScriptExhausted { consumed: usize },

    #[error("mock script mismatch at entry {index}: expected {expected}, got {got}")]
    ScriptMismatch {
        index: usize,
        expected: String,
        got: String,
    },

    #[error("backend not configured: {0}")]
    NotConfigured(String),
}

pub type Result<T, E = DoraError> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> DoraError {
    DoraError::Contract(msg.into())
}
