//! Reading trade and market files, domain classification, filtering and binning.

mod binning;
mod grid;
mod records;
mod rules;
mod stats;

pub use binning::*;
pub use grid::*;
pub use records::*;
pub use rules::*;
pub use stats::*;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("{malformed} of {rows} rows malformed, above the {}% abort threshold", MAX_MALFORMED_FRACTION * 100.0)]
    TooManyMalformed { malformed: u64, rows: u64, ledger: ErrorLedger },
    #[error("invalid domain rule {pattern:?}: {reason}")]
    Rule { pattern: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<std::io::Error> for IngestError {
    fn from(e: std::io::Error) -> Self {
        IngestError::Io(e.to_string())
    }
}
