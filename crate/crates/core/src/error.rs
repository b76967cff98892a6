//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by signal generation, model evaluation and metrology.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration violates one of its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Two operands disagree in size, length or sample rate.
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    /// A signal is too short for the requested operation.
    #[error("signal too short: {0}")]
    SignalTooShort(String),

    /// Sample rates are not related by a small-integer ratio.
    #[error("incommensurable sample rates: {from_hz} Hz -> {to_hz} Hz")]
    IncommensurableRates { from_hz: f64, to_hz: f64 },

    /// Timing correlation against the reference fell below the detection
    /// threshold; the received signal does not contain the expected frame.
    #[error("sync failure: normalized correlation peak {peak:.4} below {threshold}")]
    SyncFailure { peak: f64, threshold: f64 },

    /// The received capture does not cover the requested number of symbols.
    #[error("insufficient length: {0}")]
    InsufficientLength(String),

    /// An ACLR measurement band falls outside the representable spectrum.
    #[error("bandwidth exceeds nyquist: {0}")]
    BandwidthExceedsNyquist(String),

    /// Non-finite samples or coefficients where finite values are required.
    #[error("non-finite values: {0}")]
    NonFinite(String),

    /// A serialized model or signal file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
