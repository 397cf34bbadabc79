use thiserror::Error;

use crate::solitary::TraceEntry;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: expected (l = {expected_l}, N = {expected_n}), found (l = {found_l}, N = {found_n})")]
    GridMismatch {
        expected_l: f64,
        expected_n: usize,
        found_l: f64,
        found_n: usize,
    },

    #[error("inadmissible parameters: gamma = {gamma} is not below gamma_max = {gamma_max}")]
    Inadmissible { gamma: f64, gamma_max: f64 },

    #[error("resolvent symbol is not positive at mode {mode}: {value:e}")]
    InadmissibleSymbol { mode: i64, value: f64 },

    /// The denominator of the stabilizing factor vanished. Carries the
    /// iteration history up to the failure.
    #[error("degenerate stabilizing factor after {} trace entries", trace.len())]
    IterationDegenerate { trace: Vec<TraceEntry> },

    #[error("degenerate extrapolation: {0}")]
    DegenerateExtrapolation(String),

    #[error("stage iteration did not converge after {sweeps} sweeps (last increment {:e})", increments.last().copied().unwrap_or(f64::NAN))]
    StageDivergence { sweeps: usize, increments: Vec<f64> },

    #[error("field has no dominant pulse")]
    NoPulse,

    #[error("insufficient envelope: found {found} local maxima, need at least 4")]
    InsufficientEnvelope { found: usize },

    #[error("rank-deficient fit: {0}")]
    RankDeficientFit(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
