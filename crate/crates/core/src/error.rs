use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid transition kernel: row {row}: {reason}")]
    InvalidKernel { row: usize, reason: String },

    #[error("invalid stationary distribution: {0}")]
    InvalidStationary(String),

    #[error("kernel is reducible: stationary distribution is not unique")]
    Reducible,

    #[error("chain is not reversible (max detailed-balance violation {violation:e})")]
    NotReversible { violation: f64 },

    #[error("sample value {value} at index {index} is outside [0, 1]")]
    SampleOutOfRange { index: usize, value: f64 },

    #[error("sample source exhausted after {consumed} samples")]
    SourceExhausted { consumed: u64 },

    #[error("lag {eta} is too large for a trajectory of length {len}")]
    LagTooLarge { eta: usize, len: usize },

    #[error("function has zero variance under the chain; gap is not identifiable from it")]
    DegenerateFunction,

    #[error("every coordinate function is degenerate")]
    AllFunctionsDegenerate,

    #[error("trajectories have mismatched lengths ({expected} vs {found})")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("schedule exhausted before the stopping-time index was found")]
    ScheduleExhausted,

    #[error("initial state lies outside the prior box")]
    InitOutOfBox,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("chain {chain} failed")]
    Chain {
        chain: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_param(
    name: &'static str,
    value: f64,
    ok: bool,
    reason: &'static str,
) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}
