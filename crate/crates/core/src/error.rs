use alloc::string::String;

/// Errors raised by the bridge toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("time {t} outside [0, 1]")]
    TimeOutOfRange { t: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("score to noise conversion is singular at t = {t} (gamma = 0)")]
    SingularConversion { t: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("non-finite state at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("field does not provide a score; the reverse SDE needs one")]
    MissingScore,
    #[error("loss became NaN at step {step} (learning rate {learn_rate})")]
    NanLoss { step: usize, learn_rate: f64 },
    #[error("rank deficient: requested {requested} components, data has rank {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
