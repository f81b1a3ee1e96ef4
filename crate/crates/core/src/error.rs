use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A component is wired up inconsistently (missing latent token,
    /// head shape mismatch, missing template, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A data structure violates its own invariants (cycle in a DAG,
    /// inconsistent trace, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// A verification pass rejected an artifact; carries the failure kind.
    #[error("verification failed ({kind}): {detail}")]
    Verification { kind: String, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }
}
