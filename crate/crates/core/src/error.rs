use thiserror::Error;

/// Errors raised by models, detectors and estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("posterior probability is undefined for rho = 0")]
    UndefinedPosterior,

    #[error("calibration unreliable: {truncated_fraction} of runs hit the cap of {n_max} observations")]
    CalibrationUnreliable { truncated_fraction: f64, n_max: u64 },

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("k = {k} is too large: only {accepted} of {n_reps} runs survived to the change")]
    KTooLarge { k: u64, accepted: usize, n_reps: usize },

    #[error("comparison refused: {0}")]
    ComparisonRefused(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
