//! Crate-wide error type.

use thiserror::Error;

/// Unified error for every operation in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },

    /// A scalar or structural argument is outside its documented domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A token id does not exist in the vocabulary.
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    /// The target token sequence is empty (nothing to score).
    #[error("empty target token sequence")]
    EmptyTarget,

    /// A model was asked for an operation it does not support.
    /// Never a silent fallback: black-box targets refuse gradient requests here.
    #[error("model `{model}` does not support {operation}")]
    Capability {
        model: String,
        operation: &'static str,
    },

    /// A template references a slot that was not supplied.
    #[error("template slot {{{slot}}} missing")]
    MissingSlot { slot: String },

    /// The judge never produced a standalone 0/1 verdict.
    #[error("judge protocol: no standalone 0/1 verdict after {attempts} attempts (last output: {last_output:?})")]
    JudgeProtocol {
        attempts: usize,
        last_output: String,
    },

    /// The rephraser never produced a `PROMPT:` line.
    #[error("rephrase protocol: no PROMPT: line after {attempts} attempts (last output: {last_output:?})")]
    RephraseProtocol {
        attempts: usize,
        last_output: String,
    },

    /// A chat client failed (network, script exhausted, bad response shape).
    #[error("chat client `{client}`: {reason}")]
    Client { client: String, reason: String },

    /// A dataset line could not be ingested.
    #[error("dataset {path}:{line}: {reason}")]
    Dataset {
        path: String,
        line: usize,
        reason: String,
    },

    /// An operation was invoked on inputs that violate its stated precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            left: left.into(),
            right: right.into(),
        }
    }

    pub(crate) fn client(client: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Client {
            client: client.into(),
            reason: reason.into(),
        }
    }
}
