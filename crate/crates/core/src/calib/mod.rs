//! Penalized logistic recalibration fits and the price recalibration transform.

mod fit;
mod pooled;
mod table;

pub use fit::*;
pub use pooled::*;
pub use table::*;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("need at least 2 observations, got {n}")]
    TooFew { n: usize },
    #[error("separation: every outcome is {}, slope unbounded", if *.all_yes { "yes" } else { "no" })]
    Separation { all_yes: bool },
    #[error("identification: all observations share price {price_cents} cents")]
    Identification { price_cents: u8 },
    #[error("non-finite objective during Newton iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("recalibrate: {0}")]
    Domain(String),
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("leave-one-out needs at least 2 groups, got {0}")]
    TooFewGroups(usize),
}
