use thiserror::Error;

use crate::train::TrainTrace;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate scaling: {0}")]
    DegenerateScaling(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("intensity {value} is not positive at event {index}")]
    LogNonPositive { index: usize, value: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training aborted at epoch {epoch}: {reason}")]
    TrainingAborted {
        epoch: usize,
        reason: String,
        trace: Box<TrainTrace>,
    },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("degenerate mixture fit: {0}")]
    DegenerateFit(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidModel(_) => "invalid-model",
            Error::InvalidSequence(_) => "invalid-sequence",
            Error::Precondition(_) => "precondition",
            Error::DegenerateScaling(_) => "degenerate-scaling",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::NumericOverflow(_) => "numeric-overflow",
            Error::LogNonPositive { .. } => "log-non-positive",
            Error::NonFinite(_) => "non-finite",
            Error::TrainingAborted { .. } => "training-aborted",
            Error::Simulation(_) => "simulation",
            Error::DegenerateFit(_) => "degenerate-fit",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericOverflow(_)
                | Error::LogNonPositive { .. }
                | Error::NonFinite(_)
                | Error::TrainingAborted { .. }
                | Error::Simulation(_)
                | Error::DegenerateFit(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
