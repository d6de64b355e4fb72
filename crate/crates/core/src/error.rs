use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("non-finite value encountered at batch index {index}")]
    NumericOverflow { index: usize },

    #[error("velocity Hessian is near singular (condition number {condition:.3e})")]
    NearSingularHessian { condition: f64 },

    #[error("rollout diverged at step {step} (|x| = {magnitude:.3e})")]
    DivergedRollout { step: usize, magnitude: f64 },

    #[error("regressor is rank deficient (null-space dimension {nullity})")]
    RankDeficient { nullity: usize },

    #[error("unsupported plant kind: {0}")]
    UnsupportedPlant(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable identifier of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InputShape { .. } => "InputShape",
            Error::NumericOverflow { .. } => "NumericOverflow",
            Error::NearSingularHessian { .. } => "NearSingularHessian",
            Error::DivergedRollout { .. } => "DivergedRollout",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::UnsupportedPlant(_) => "UnsupportedPlant",
            Error::EmptyDataset => "EmptyDataset",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
