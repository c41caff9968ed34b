//! Additive decomposition of cell slopes into horizon, domain, domain-by-horizon
//! and domain-by-size components, with variance attribution and F-tests.

mod components;
mod linear;
mod platform;
mod scale;
mod slopes;
mod variance;

pub use components::*;
pub use linear::*;
pub use platform::*;
pub use scale::*;
pub use slopes::*;
pub use variance::*;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecompError {
    #[error("incomplete grid, missing {} cell(s): {}", .0.len(), .0.join(", "))]
    Incomplete(Vec<String>),
    #[error("cell {0} has a non-positive standard error")]
    DegenerateWeight(String),
    #[error("design is rank deficient in the constrained basis ({rank} of {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },
    #[error("residual degrees of freedom {0} must be positive")]
    NoResidualDf(i64),
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("size bin {0} out of range")]
    SizeOutOfRange(usize),
    #[error("no domains in common between the two grids")]
    NoOverlap,
    #[error("aggregate refit failed for {what}: {source}")]
    Refit { what: String, source: crate::calib::CalibError },
}
