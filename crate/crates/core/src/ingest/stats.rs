//! Per-domain descriptive statistics of a raw dataset.

use std::collections::HashMap;

use serde::Serialize;

use super::records::{MarketRecord, Outcome, TradeRecord};
use super::rules::DomainRuleSet;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainStats {
    pub domain: String,
    pub markets: u64,
    pub trades: u64,
    pub contracts: u64,
    /// Percent of the domain's markets with a yes/no outcome.
    pub resolved_pct: f64,
    /// Median trade count over the domain's markets.
    pub median_volume: f64,
    /// Percent of resolved markets that resolved yes.
    pub base_rate_pct: f64,
}

/// Accumulates trade counts one record at a time.
pub struct StatsAccumulator {
    index: HashMap<String, usize>,
    domain_of: Vec<usize>,
    outcome: Vec<Outcome>,
    trades: Vec<u64>,
    contracts: Vec<u64>,
    domains: Vec<String>,
    /// Trades whose market id is not in the market file.
    pub unmatched_trades: u64,
}

impl StatsAccumulator {
    pub fn new(markets: &[MarketRecord], rules: &DomainRuleSet) -> Self {
        let mut domains = rules.domains();
        domains.push(rules.fallback_domain.clone());
        let mut acc = StatsAccumulator {
            index: HashMap::with_capacity(markets.len()),
            domain_of: Vec::new(),
            outcome: Vec::new(),
            trades: Vec::new(),
            contracts: Vec::new(),
            domains,
            unmatched_trades: 0,
        };
        for m in markets {
            if acc.index.contains_key(&m.market_id) {
                continue;
            }
            let d = rules.classify(m);
            let di = acc.domains.iter().position(|x| x == d).expect("classify returns a known domain");
            acc.index.insert(m.market_id.clone(), acc.domain_of.len());
            acc.domain_of.push(di);
            acc.outcome.push(m.outcome);
            acc.trades.push(0);
            acc.contracts.push(0);
        }
        acc
    }

    pub fn add(&mut self, trade: &TradeRecord) {
        match self.index.get(&trade.market_id) {
            Some(&i) => {
                self.trades[i] += 1;
                self.contracts[i] += trade.count;
            }
            None => self.unmatched_trades += 1,
        }
    }

    /// One row per domain in rule order, fallback last; empty domains give zero rows.
    pub fn finish(self) -> Vec<DomainStats> {
        let mut out = Vec::with_capacity(self.domains.len());
        for (di, name) in self.domains.iter().enumerate() {
            let members: Vec<usize> = (0..self.domain_of.len()).filter(|&i| self.domain_of[i] == di).collect();
            let markets = members.len() as u64;
            let resolved = members.iter().filter(|&&i| self.outcome[i].is_resolved()).count() as u64;
            let yes = members.iter().filter(|&&i| self.outcome[i] == Outcome::Yes).count() as u64;
            let mut vols: Vec<u64> = members.iter().map(|&i| self.trades[i]).collect();
            vols.sort_unstable();
            let median_volume = match vols.len() {
                0 => 0.0,
                n if n % 2 == 1 => vols[n / 2] as f64,
                n => (vols[n / 2 - 1] + vols[n / 2]) as f64 / 2.0,
            };
            let pct = |num: u64, den: u64| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
            out.push(DomainStats {
                domain: name.clone(),
                markets,
                trades: members.iter().map(|&i| self.trades[i]).sum(),
                contracts: members.iter().map(|&i| self.contracts[i]).sum(),
                resolved_pct: pct(resolved, markets),
                median_volume,
                base_rate_pct: pct(yes, resolved),
            });
        }
        out
    }
}

pub fn dataset_stats(trades: &[TradeRecord], markets: &[MarketRecord], rules: &DomainRuleSet) -> Vec<DomainStats> {
    let mut acc = StatsAccumulator::new(markets, rules);
    for t in trades {
        acc.add(t);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Side;

    fn market(id: &str, outcome: Outcome) -> MarketRecord {
        MarketRecord { market_id: id.into(), event_ticker: "X".into(), title: String::new(), close_time_ms: 0, outcome }
    }

    fn trade(id: &str, count: u64) -> TradeRecord {
        TradeRecord { market_id: id.into(), price_cents: 50, count, side: Side::No, timestamp_ms: 0 }
    }

    #[test]
    fn single_market() {
        let s = dataset_stats(&[trade("a", 1), trade("a", 2), trade("a", 3)], &[market("a", Outcome::Yes)], &DomainRuleSet::default());
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].markets, s[0].trades, s[0].contracts), (1, 3, 6));
        assert_eq!(s[0].base_rate_pct, 100.0);
        assert_eq!(s[0].median_volume, 3.0);
    }

    #[test]
    fn symmetric_outcomes_and_unresolved() {
        let markets = [market("a", Outcome::Yes), market("b", Outcome::No), market("c", Outcome::Unresolved)];
        let s = dataset_stats(&[trade("a", 1), trade("b", 1), trade("b", 1), trade("q", 1)], &markets, &DomainRuleSet::default());
        assert_eq!(s[0].base_rate_pct, 50.0);
        assert!((s[0].resolved_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(s[0].median_volume, 1.0);
    }

    #[test]
    fn empty_domain_is_zero_row() {
        let rules = DomainRuleSet::from_csv("match_kind,pattern,domain\nticker_prefix,POL,Politics\n".as_bytes()).unwrap();
        let s = dataset_stats(&[], &[], &rules);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].domain, "Politics");
        assert_eq!((s[0].markets, s[0].median_volume, s[0].base_rate_pct), (0, 0.0, 0.0));
    }
}
