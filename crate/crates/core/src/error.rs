//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector norm fell at or below the `1e-12` floor. Zero-norm embeddings
    /// indicate a collapsed model and must surface instead of scoring as 0.
    #[error("vector norm at or below 1e-12 (collapsed embedding or class row)")]
    ZeroVector,

    /// Signal or noise power is zero, so no gain can hit the requested SNR.
    #[error("zero-power matrix: cannot scale to a target SNR")]
    ZeroPower,

    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Dimensions of an input do not match what the operation requires.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A stage-2 operation was handed an anchor branch that is not frozen.
    #[error("anchor branch must be frozen")]
    AnchorNotFrozen,

    /// Attempted to mutate the parameters of a frozen branch.
    #[error("branch is frozen; parameters cannot be mutated")]
    FrozenBranch,

    /// A request that cannot be met by the data it was made against.
    #[error("infeasible request: {0}")]
    Infeasible(String),

    /// Data too degenerate for the operation (single class, empty list, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// An utterance id referenced by a trial is not in the dataset.
    #[error("unknown utterance id: {0}")]
    UnknownId(String),

    /// An argument or configuration value is outside its allowed range.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A file exists but does not parse as the expected format.
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
