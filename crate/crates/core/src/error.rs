use thiserror::Error;

/// Errors raised by the borrowing, inference and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument fell outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Every variance term feeding a standardized statistic is zero.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(&'static str),

    /// The supplied root-finding bracket does not straddle a sign change.
    #[error("no sign change in bracket [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    /// Two logistic anchors share the same |T1| value.
    #[error("singular system: logistic anchors must have distinct t-values")]
    SingularSystem,

    /// A solver could not produce a trustworthy answer.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A request was well-formed but asked for something unsupported.
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
