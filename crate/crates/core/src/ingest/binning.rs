//! Time-to-resolution and trade-size bins.

use serde::{Deserialize, Serialize};

use super::records::{MarketRecord, TradeRecord};
use super::IngestError;

pub const HOUR_MS: i64 = 3_600_000;
pub const DAY_MS: i64 = 24 * HOUR_MS;
/// A month is taken as exactly 30 days.
pub const MONTH_MS: i64 = 30 * DAY_MS;

pub const HORIZON_BINS: usize = 9;
pub const SIZE_BINS: usize = 4;

pub const HORIZON_LABELS: [&str; HORIZON_BINS] =
    ["0-1h", "1-3h", "3-6h", "6-12h", "12-24h", "24-48h", "2d-1w", "1w-1mo", "1mo+"];
pub const SIZE_LABELS: [&str; SIZE_BINS] = ["Single", "Small", "Medium", "Large"];

pub const SINGLE: usize = 0;
pub const LARGE: usize = 3;

/// Bin edges. Intervals are left-closed, right-open; the last of each is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningConfig {
    /// Lower edge of each horizon bin in milliseconds; first must be 0.
    pub horizon_lower_ms: Vec<i64>,
    /// Lower edge of each size bin in contracts; first must be 1.
    pub size_lower: Vec<u64>,
    /// Representative log trade size per size bin, before centring.
    pub representative_log_size: Vec<f64>,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            horizon_lower_ms: vec![
                0,
                HOUR_MS,
                3 * HOUR_MS,
                6 * HOUR_MS,
                12 * HOUR_MS,
                24 * HOUR_MS,
                48 * HOUR_MS,
                7 * DAY_MS,
                MONTH_MS,
            ],
            size_lower: vec![1, 2, 11, 101],
            // log of geometric bin midpoints: 1, sqrt(2*10), sqrt(11*100), sqrt(101*1000)
            representative_log_size: vec![
                0.0,
                0.5 * 20f64.ln(),
                0.5 * 1100f64.ln(),
                0.5 * 101_000f64.ln(),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinError {
    /// The trade executed after the market closed.
    NegativeHorizon { horizon_ms: i64 },
}

impl BinningConfig {
    pub fn horizon_bins(&self) -> usize {
        self.horizon_lower_ms.len()
    }

    pub fn size_bins(&self) -> usize {
        self.size_lower.len()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |msg: &str| Err(IngestError::Config(format!("binning: {msg}")));
        if self.horizon_lower_ms.first() != Some(&0) {
            return bad("horizon bins must start at 0");
        }
        if self.horizon_lower_ms.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizon edges must be strictly increasing");
        }
        if self.size_lower.first() != Some(&1) {
            return bad("size bins must start at 1 contract");
        }
        if self.size_lower.windows(2).any(|w| w[0] >= w[1]) {
            return bad("size edges must be strictly increasing");
        }
        if self.representative_log_size.len() != self.size_lower.len() {
            return bad("one representative log size per size bin is required");
        }
        Ok(())
    }

    pub fn horizon_bin(&self, horizon_ms: i64) -> Result<usize, BinError> {
        if horizon_ms < 0 {
            return Err(BinError::NegativeHorizon { horizon_ms });
        }
        Ok(self.horizon_lower_ms.partition_point(|&lo| lo <= horizon_ms) - 1)
    }

    pub fn size_bin(&self, count: u64) -> usize {
        self.size_lower.partition_point(|&lo| lo <= count).saturating_sub(1)
    }

    /// Centred representative log sizes (sum to zero).
    pub fn centred_log_sizes(&self) -> Vec<f64> {
        let m = self.representative_log_size.iter().sum::<f64>() / self.representative_log_size.len() as f64;
        self.representative_log_size.iter().map(|v| v - m).collect()
    }
}

/// Horizon is `close_time - trade_time`.
pub fn bin_trade(trade: &TradeRecord, market: &MarketRecord, cfg: &BinningConfig) -> Result<(usize, usize), BinError> {
    let h = cfg.horizon_bin(market.close_time_ms - trade.timestamp_ms)?;
    Ok((h, cfg.size_bin(trade.count)))
}

pub fn horizon_label(bin: usize) -> String {
    HORIZON_LABELS.get(bin).map(|s| s.to_string()).unwrap_or_else(|| format!("h{bin}"))
}

pub fn size_label(bin: usize) -> String {
    SIZE_LABELS.get(bin).map(|s| s.to_string()).unwrap_or_else(|| format!("s{bin}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Outcome, Side};

    fn pair(horizon_ms: i64, count: u64) -> (TradeRecord, MarketRecord) {
        let close = 1_700_000_000_000;
        (
            TradeRecord { market_id: "m".into(), price_cents: 50, count, side: Side::Yes, timestamp_ms: close - horizon_ms },
            MarketRecord {
                market_id: "m".into(),
                event_ticker: "T".into(),
                title: String::new(),
                close_time_ms: close,
                outcome: Outcome::No,
            },
        )
    }

    #[test]
    fn ninety_minutes_lands_in_second_bin() {
        let cfg = BinningConfig::default();
        let (t, m) = pair(90 * 60 * 1000, 5);
        let (h, s) = bin_trade(&t, &m, &cfg).unwrap();
        assert_eq!(HORIZON_LABELS[h], "1-3h");
        assert_eq!(SIZE_LABELS[s], "Small");
    }

    #[test]
    fn size_boundaries() {
        let cfg = BinningConfig::default();
        assert_eq!(cfg.size_bin(1), SINGLE);
        assert_eq!(cfg.size_bin(2), 1);
        assert_eq!(cfg.size_bin(10), 1);
        assert_eq!(cfg.size_bin(11), 2);
        assert_eq!(cfg.size_bin(100), 2);
        assert_eq!(cfg.size_bin(101), LARGE);
        assert_eq!(cfg.size_bin(1_000_000), LARGE);
    }

    #[test]
    fn horizon_edges_are_left_closed() {
        let cfg = BinningConfig::default();
        assert_eq!(cfg.horizon_bin(0), Ok(0));
        assert_eq!(cfg.horizon_bin(HOUR_MS - 1), Ok(0));
        assert_eq!(cfg.horizon_bin(HOUR_MS), Ok(1));
        assert_eq!(cfg.horizon_bin(7 * DAY_MS), Ok(7));
        assert_eq!(cfg.horizon_bin(30 * DAY_MS - 1), Ok(7));
        assert_eq!(cfg.horizon_bin(30 * DAY_MS), Ok(8));
        assert_eq!(cfg.horizon_bin(i64::MAX), Ok(8));
        assert_eq!(cfg.horizon_bin(-1), Err(BinError::NegativeHorizon { horizon_ms: -1 }));
    }

    #[test]
    fn representative_sizes() {
        let cfg = BinningConfig::default();
        let r = &cfg.representative_log_size;
        assert!((r[1] - 1.498).abs() < 1e-3 && (r[2] - 3.502).abs() < 1e-3 && (r[3] - 5.761).abs() < 1e-3);
        assert!(cfg.centred_log_sizes().iter().sum::<f64>().abs() < 1e-12);
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.horizon_lower_ms[2] = bad.horizon_lower_ms[1];
        assert!(bad.validate().is_err());
    }
}
