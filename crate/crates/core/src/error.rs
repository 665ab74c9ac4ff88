use thiserror::Error;

/// Errors raised by the simulator and the theory layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid truncation: n_max must be at least {min}, got {got}")]
    InvalidTruncation { min: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("Hilbert dimension {dim} exceeds the supported maximum {max}")]
    DimensionOverflow { dim: usize, max: usize },

    #[error("Liouvillian has no unique steady state (reciprocal condition {rcond:.3e})")]
    NonUniqueSteadyState { rcond: f64 },

    #[error("correlation undefined: mean population {population:.3e} is not positive")]
    UndefinedCorrelation { population: f64 },

    #[error(
        "sensor coupling too large: g at eps ({coarse:.9}) and eps/10 ({fine:.9}) differ by {relative:.3e}"
    )]
    EpsilonTooLarge { coarse: f64, fine: f64, relative: f64 },

    #[error("timestep too large: total jump probability {probability:.4} per step")]
    TimestepTooLarge { probability: f64 },

    #[error("detector truncation too small: top Fock occupancy {occupancy:.3e} on detector {detector}")]
    TruncationTooSmall { detector: usize, occupancy: f64 },

    #[error("empty click stream")]
    EmptyStream,

    #[error("not enough clicks: need {needed}, have {have}")]
    TooFewClicks { needed: usize, have: usize },

    #[error("incompatible streams: run ids {0} and {1}")]
    IncompatibleStreams(String, String),

    #[error("inconsistent moments: reconstructed p({n}) = {value:.3e}")]
    InconsistentMoments { n: usize, value: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
