//! Sufficient statistics for one logistic fit.
//!
//! Prices are integer cents, so any set of observations collapses to at most
//! 99 x 2 (price, outcome) groups carrying a trade count and a contract sum.

use serde::{Deserialize, Serialize};

use crate::ingest::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// Every trade counts once.
    #[default]
    Trade,
    /// Every trade counts by its contract count.
    Contract,
}

impl std::str::FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "trade" => Ok(WeightScheme::Trade),
            "contract" => Ok(WeightScheme::Contract),
            other => Err(format!("unknown weight scheme {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cell {
    pub trades: u64,
    pub contracts: u64,
}

/// Aggregated (price, outcome) counts. Index `[price_cents - 1][outcome]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriceTable {
    pub groups: [[Cell; 2]; 99],
}

impl Default for PriceTable {
    fn default() -> Self {
        PriceTable { groups: [[Cell::default(); 2]; 99] }
    }
}

impl PriceTable {
    pub fn from_observations<'a>(obs: impl IntoIterator<Item = &'a Observation>) -> Self {
        let mut t = PriceTable::default();
        for o in obs {
            t.add(o.price_cents, o.outcome, 1, o.count);
        }
        t
    }

    /// `price_cents` must be in 1..=99.
    pub fn add(&mut self, price_cents: u8, outcome: bool, trades: u64, contracts: u64) {
        let g = &mut self.groups[usize::from(price_cents) - 1][usize::from(outcome)];
        g.trades += trades;
        g.contracts += contracts;
    }

    pub fn merge(&mut self, other: &PriceTable) {
        for (mine, theirs) in self.groups.iter_mut().zip(&other.groups) {
            for k in 0..2 {
                mine[k].trades += theirs[k].trades;
                mine[k].contracts += theirs[k].contracts;
            }
        }
    }

    /// `self - other`; `other` must be a sub-multiset of `self`.
    pub fn subtract(&self, other: &PriceTable) -> PriceTable {
        let mut out = self.clone();
        for (mine, theirs) in out.groups.iter_mut().zip(&other.groups) {
            for k in 0..2 {
                mine[k].trades -= theirs[k].trades;
                mine[k].contracts -= theirs[k].contracts;
            }
        }
        out
    }

    pub fn trades(&self) -> u64 {
        self.groups.iter().flatten().map(|c| c.trades).sum()
    }

    pub fn contracts(&self) -> u64 {
        self.groups.iter().flatten().map(|c| c.contracts).sum()
    }

    /// Non-empty groups as `(price_cents, outcome, weight)`.
    pub fn weighted(&self, scheme: WeightScheme) -> impl Iterator<Item = (u8, bool, u64)> + '_ {
        self.groups.iter().enumerate().flat_map(move |(i, pair)| {
            pair.iter().enumerate().filter_map(move |(y, c)| {
                let w = match scheme {
                    WeightScheme::Trade => c.trades,
                    WeightScheme::Contract => c.contracts,
                };
                (c.trades > 0).then_some((i as u8 + 1, y == 1, w))
            })
        })
    }
}
