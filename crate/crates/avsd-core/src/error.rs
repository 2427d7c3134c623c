use thiserror::Error;

/// Errors produced by distribution construction and the pooling pipeline.
#[derive(Debug, Error)]
pub enum SignalError {
    /// Two quantities that must share a vocabulary (or view count) do not.
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Rejected caller input (non-finite values, bad weights, empty lists, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An internal identity that must hold within tolerance did not;
    /// signals corrupted inputs rather than a caller mistake.
    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),
}
