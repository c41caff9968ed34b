use marketcal::bayes::BayesError;
use marketcal::calib::CalibError;
use marketcal::decomp::DecompError;
use marketcal::ingest::IngestError;
use marketcal::resample::ResampleError;
use marketcal::synth::SynthError;
use thiserror::Error;

/// Every failure maps to one of three exit statuses.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(what: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{what}: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Config(_) | IngestError::Rule { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::Config(_) | CalibError::Domain(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<DecompError> for CliError {
    fn from(e: DecompError) -> Self {
        match e {
            DecompError::Incomplete(_)
            | DecompError::UnknownDomain(_)
            | DecompError::SizeOutOfRange(_)
            | DecompError::NoOverlap => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ResampleError> for CliError {
    fn from(e: ResampleError) -> Self {
        match e {
            ResampleError::Config(_) => CliError::Config(e.to_string()),
            ResampleError::MissingCells { .. } => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<BayesError> for CliError {
    fn from(e: BayesError) -> Self {
        match e {
            BayesError::Spec(_) | BayesError::Config(_) => CliError::Config(e.to_string()),
            BayesError::IncompleteGrid(_) | BayesError::Mismatch(_) => CliError::Data(e.to_string()),
            BayesError::NonFiniteInput | BayesError::Sampler(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Spec(_) | SynthError::NonPositiveSlope { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
