use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank formulas disagree ({form_rank} vs {form_nullity}); inputs are inconsistently scaled for the tolerance")]
    InconsistentRankForms { form_rank: usize, form_nullity: usize },

    #[error("invalid fault scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid output subset: {0}")]
    InvalidSubset(String),

    #[error("invalid fault channel: {0}")]
    InvalidChannel(String),

    #[error("window length {window} exceeds signal length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("input data is not persistently exciting: {0}")]
    NotPersistentlyExciting(String),

    #[error("system order is ambiguous: {0}")]
    OrderAmbiguous(String),

    #[error("filter horizon too short: {0}")]
    HorizonTooShort(String),

    #[error("rank tolerance ambiguous: {0}")]
    RankToleranceAmbiguous(String),

    #[error("fault subsystem is not left invertible")]
    NotLeftInvertible,

    #[error("numerically ill-conditioned: {0}")]
    NumericallyIllConditioned(String),

    #[error("intersection dimensions disagree between routes: {0}")]
    TheoremMismatch(String),

    #[error("no fault combination reaches the angle tolerance (max {max_faults} simultaneous faults)")]
    CombinationNotFound { max_faults: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
