//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by attack, defense, dataset, and evaluation operations.
#[derive(Debug, Error)]
pub enum AdvError {
    /// Tensor shapes are incompatible with the operation's contract.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value violates an operation's precondition.
    #[error("invalid config: {0}")]
    Config(String),

    /// Input data violates a domain invariant (non-finite values, labels out
    /// of range, scores outside (0,1), ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A numerical guard fired (divergent loss, non-finite gradient).
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A file has the wrong magic, version, or internal structure.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// A required artifact (dataset file, checkpoint, manifest) is absent.
    /// `hint` names the command or step that produces it.
    #[error("missing artifact: {what}. {hint}")]
    MissingArtifact { what: String, hint: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AdvError>;
