//! Error types shared across modules.

use alloc::string::String;
use thiserror::Error;

/// Failure reported by an external model provider (embedding, reranker, judge).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{provider}: {message}")]
pub struct ProviderError {
    pub provider: String,
    pub message: String,
    /// Whether a retry may succeed (timeouts, 5xx, connection resets).
    pub retryable: bool,
}

impl ProviderError {
    pub fn new(provider: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            provider: provider.into(),
            message: message.into(),
            retryable: false,
        }
    }

    pub fn retryable(provider: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            retryable: true,
            ..Self::new(provider, message)
        }
    }
}
