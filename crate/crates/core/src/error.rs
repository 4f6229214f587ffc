use thiserror::Error;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input is empty")]
    EmptyInput,
    #[error("row {row}: malformed record: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: time must be positive")]
    NonPositiveTime { row: usize },
    #[error("row {row}: event flag must be 0 or 1")]
    InvalidEvent { row: usize },
    #[error("row {row}: group must be 0 or 1")]
    InvalidGroup { row: usize },
    #[error("bad header, expected `time,event,group`")]
    BadHeader,
    #[error("at least two records are required, got {0}")]
    TooFewRecords(usize),
    #[error("no failure has a risk set containing both groups")]
    NoInformativeFailures,
    #[error("empty risk set at t = {0}")]
    EmptyRiskSet(f64),
    #[error("stratum has no records")]
    EmptyStratum,
    #[error("zero conditional variance at grid point {0}")]
    ZeroVariance(usize),
    #[error("segment too small: {before} failures before, {after} after (minimum {min_seg})")]
    SegmentTooSmall {
        before: usize,
        after: usize,
        min_seg: usize,
    },
    #[error("shape function vanishes on the grid")]
    DegenerateShape,
    #[error("slope before the changepoint is zero, ratio undefined")]
    UndefinedRatio,
    #[error("invalid interval: require 0 < eps1 < eps2 < 1, got ({0}, {1})")]
    InvalidEpsilon(f64, f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
