use thiserror::Error;

/// Errors surfaced by the library layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("confidence bounds need at least one pull")]
    ZeroPulls,

    #[error("index {index} out of range 1..={len}")]
    OutOfRange { index: u64, len: u64 },

    #[error("NaN index for arm {0}")]
    NanIndex(u8),

    #[error("behavior needs per-arm reward sequences but none were supplied")]
    MissingRecentRewards,

    #[error("reward tape for arm {0} is exhausted")]
    TapeExhausted(u8),

    #[error("instance too large for exhaustive enumeration: 2*(n0+T) = {bits} > {limit}")]
    TooLargeForEnumeration { bits: u64, limit: u64 },

    #[error("behavior `{0}` randomizes beyond tie-breaking and cannot be enumerated")]
    NotEnumerable(String),

    #[error("index {index} = {value} escapes the confidence interval [{lcb}, {ucb}]")]
    ContainmentViolated {
        index: u8,
        value: f64,
        lcb: f64,
        ucb: f64,
    },

    #[error("failure state is undetermined: trajectory stopped after {stopped} good-arm pulls")]
    Undetermined { stopped: u64 },

    #[error("prior gap must be positive, got {0}")]
    NonPositivePriorGap(f64),

    #[error("root not bracketed for p = {p}, q = {q}")]
    NotBracketed { p: f64, q: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
