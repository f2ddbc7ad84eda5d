use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A time window or index range is empty or reversed.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The loop function has no finite-dimensional linear companion form.
    #[error("unclassifiable loop function: {0}")]
    Unclassifiable(String),

    #[error("time sequence is empty")]
    EmptyTimeSequence,

    /// A certificate variant that needs every frozen loop to be stabilizing
    /// met a destabilizing one.
    #[error("frozen loop at t = {t} is destabilizing; this variant needs all frozen loops stabilizing")]
    RequiresStabilizing { t: i64 },

    #[error("no admissible time sequence: window starting after t = {after} cannot be closed within {max_gap} steps")]
    InfeasibleSequence { after: i64, max_gap: usize },

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
