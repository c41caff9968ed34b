//! Joining trades to resolved markets, filtering, and binning into analysis cells.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::binning::{BinError, BinningConfig};
use super::records::{ErrorLedger, MarketRecord, Outcome, TradeRecord};
use super::rules::DomainRuleSet;
use super::IngestError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Inclusive lower price bound in cents.
    pub price_min: u8,
    /// Inclusive upper price bound in cents.
    pub price_max: u8,
    /// Markets with fewer joined trades are dropped whole.
    pub min_trades_per_market: usize,
    /// Cells with fewer surviving trades are left out of the grid.
    pub min_trades_per_cell: usize,
    /// When false, trades after close are binned as horizon zero.
    pub drop_negative_horizon: bool,
    /// Horizon bins to keep; `None` keeps all.
    pub reliable_horizon_mask: Option<Vec<usize>>,
    /// Leaves the fallback domain out of the grid.
    pub exclude_fallback_domain: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            price_min: 5,
            price_max: 95,
            min_trades_per_market: 10,
            min_trades_per_cell: 200,
            drop_negative_horizon: true,
            reliable_horizon_mask: None,
            exclude_fallback_domain: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(1 <= self.price_min && self.price_min < self.price_max && self.price_max <= 99) {
            return Err(IngestError::Config(format!(
                "filter: need 1 <= price_min < price_max <= 99, got [{}, {}]",
                self.price_min, self.price_max
            )));
        }
        Ok(())
    }

    fn keeps_horizon(&self, bin: usize) -> bool {
        self.reliable_horizon_mask.as_ref().is_none_or(|m| m.contains(&bin))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub domain: String,
    pub horizon_bin: usize,
    pub size_bin: usize,
}

/// One filtered trade, reduced to what the estimators need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Observation {
    /// Index into [`Grid::market_ids`].
    pub market: u32,
    pub price_cents: u8,
    /// Outcome of the market, shared by all its trades.
    pub outcome: bool,
    pub count: u64,
    pub horizon_ms: i64,
}

impl Observation {
    pub fn price_fraction(&self) -> f64 {
        f64::from(self.price_cents) / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellData {
    pub key: CellKey,
    /// Sorted, so the cell does not depend on input row order.
    pub observations: Vec<Observation>,
}

impl CellData {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn contracts(&self) -> u64 {
        self.observations.iter().map(|o| o.count).sum()
    }
}

/// Why trades did not reach the grid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub unknown_market: u64,
    pub unresolved_market: u64,
    pub excluded_domain: u64,
    pub thin_market: u64,
    pub price_range: u64,
    pub negative_horizon: u64,
    pub masked_horizon: u64,
    pub small_cell: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AssemblyReport {
    /// Trades naming a market id absent from the market file.
    pub ledger: ErrorLedger,
    pub drops: DropCounts,
    pub trades_seen: u64,
    pub trades_retained: u64,
    pub markets_retained: usize,
    pub cells_dropped: Vec<(CellKey, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub cells: BTreeMap<CellKey, CellData>,
    /// Sorted ids of markets with at least one retained trade.
    pub market_ids: Vec<String>,
    /// Domains in rule order, restricted to those present in `cells`.
    pub domains: Vec<String>,
    pub report: AssemblyReport,
}

impl Grid {
    pub fn get(&self, domain: &str, horizon_bin: usize, size_bin: usize) -> Option<&CellData> {
        self.cells.get(&CellKey { domain: domain.to_string(), horizon_bin, size_bin })
    }

    pub fn observation_count(&self) -> usize {
        self.cells.values().map(CellData::len).sum()
    }
}

struct MarketInfo {
    domain: Option<u16>,
    resolved: Option<bool>,
    close_time_ms: i64,
    trades: u64,
}

/// First pass of a two-pass build: counts trades per market.
///
/// Callers that cannot hold the trade file in memory stream it twice, once
/// through [`GridBuilder::count`] and once through [`GridFiller::add`].
pub struct GridBuilder {
    index: HashMap<String, usize>,
    ids: Vec<String>,
    markets: Vec<MarketInfo>,
    domain_names: Vec<String>,
    bins: BinningConfig,
    filt: FilterConfig,
}

impl GridBuilder {
    pub fn new(
        markets: &[MarketRecord],
        rules: &DomainRuleSet,
        bins: &BinningConfig,
        filt: &FilterConfig,
    ) -> Result<Self, IngestError> {
        bins.validate()?;
        filt.validate()?;
        let mut domain_names = rules.domains();
        if !filt.exclude_fallback_domain {
            domain_names.push(rules.fallback_domain.clone());
        }
        let mut index = HashMap::with_capacity(markets.len());
        let mut ids = Vec::with_capacity(markets.len());
        let mut infos = Vec::with_capacity(markets.len());
        for m in markets {
            if index.contains_key(&m.market_id) {
                continue;
            }
            let name = rules.classify(m);
            let domain = domain_names.iter().position(|d| d == name).map(|i| i as u16);
            let resolved = match m.outcome {
                Outcome::Yes => Some(true),
                Outcome::No => Some(false),
                Outcome::Unresolved => None,
            };
            index.insert(m.market_id.clone(), ids.len());
            ids.push(m.market_id.clone());
            infos.push(MarketInfo { domain, resolved, close_time_ms: m.close_time_ms, trades: 0 });
        }
        Ok(GridBuilder { index, ids, markets: infos, domain_names, bins: bins.clone(), filt: filt.clone() })
    }

    pub fn count(&mut self, trade: &TradeRecord) {
        if let Some(&i) = self.index.get(&trade.market_id) {
            self.markets[i].trades += 1;
        }
    }

    /// Fixes the market-level filter and interns the surviving markets.
    pub fn seal(self) -> GridFiller {
        let min = self.filt.min_trades_per_market as u64;
        let mut kept: Vec<usize> = (0..self.ids.len())
            .filter(|&i| {
                let m = &self.markets[i];
                m.resolved.is_some() && m.domain.is_some() && m.trades >= min
            })
            .collect();
        kept.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        let mut interned = vec![u32::MAX; self.ids.len()];
        for (rank, &i) in kept.iter().enumerate() {
            interned[i] = rank as u32;
        }
        GridFiller {
            builder: self,
            interned,
            kept,
            buckets: HashMap::new(),
            report: AssemblyReport::default(),
        }
    }
}

/// Second pass: filters and bins each trade.
pub struct GridFiller {
    builder: GridBuilder,
    interned: Vec<u32>,
    kept: Vec<usize>,
    buckets: HashMap<(u16, usize, usize), Vec<Observation>>,
    report: AssemblyReport,
}

impl GridFiller {
    /// `line` is the trade's position in its source, used for ledger entries.
    pub fn add(&mut self, trade: &TradeRecord, line: u64) {
        let b = &self.builder;
        let drops = &mut self.report.drops;
        self.report.trades_seen += 1;
        let Some(&i) = b.index.get(&trade.market_id) else {
            drops.unknown_market += 1;
            self.report.ledger.push(line, format!("trade references unknown market_id {:?}", trade.market_id));
            return;
        };
        let m = &b.markets[i];
        let Some(outcome) = m.resolved else {
            drops.unresolved_market += 1;
            return;
        };
        let Some(domain) = m.domain else {
            drops.excluded_domain += 1;
            return;
        };
        if m.trades < b.filt.min_trades_per_market as u64 {
            drops.thin_market += 1;
            return;
        }
        if trade.price_cents < b.filt.price_min || trade.price_cents > b.filt.price_max {
            drops.price_range += 1;
            return;
        }
        let horizon_ms = m.close_time_ms - trade.timestamp_ms;
        let h = match b.bins.horizon_bin(horizon_ms) {
            Ok(h) => h,
            Err(BinError::NegativeHorizon { .. }) if b.filt.drop_negative_horizon => {
                drops.negative_horizon += 1;
                return;
            }
            Err(BinError::NegativeHorizon { .. }) => 0,
        };
        if !b.filt.keeps_horizon(h) {
            drops.masked_horizon += 1;
            return;
        }
        let s = b.bins.size_bin(trade.count);
        self.buckets.entry((domain, h, s)).or_default().push(Observation {
            market: self.interned[i],
            price_cents: trade.price_cents,
            outcome,
            count: trade.count,
            horizon_ms,
        });
    }

    pub fn finish(self) -> Grid {
        let GridFiller { builder, kept, buckets, mut report, .. } = self;
        let min_cell = builder.filt.min_trades_per_cell;
        let mut cells = BTreeMap::new();
        let mut used = vec![false; kept.len()];
        for ((d, h, s), mut obs) in buckets {
            let key = CellKey { domain: builder.domain_names[d as usize].clone(), horizon_bin: h, size_bin: s };
            if obs.len() < min_cell {
                report.drops.small_cell += obs.len() as u64;
                report.cells_dropped.push((key, obs.len()));
                continue;
            }
            obs.sort_unstable();
            for o in &obs {
                used[o.market as usize] = true;
            }
            report.trades_retained += obs.len() as u64;
            cells.insert(key.clone(), CellData { key, observations: obs });
        }
        report.cells_dropped.sort();

        // Re-intern over markets that actually contribute, keeping sorted order.
        let mut remap = vec![u32::MAX; kept.len()];
        let mut market_ids = Vec::new();
        for (rank, &i) in kept.iter().enumerate() {
            if used[rank] {
                remap[rank] = market_ids.len() as u32;
                market_ids.push(builder.ids[i].clone());
            }
        }
        for cell in cells.values_mut() {
            for o in &mut cell.observations {
                o.market = remap[o.market as usize];
            }
        }
        report.markets_retained = market_ids.len();
        let domains = builder
            .domain_names
            .iter()
            .filter(|d| cells.keys().any(|k| &k.domain == *d))
            .cloned()
            .collect();
        Grid { cells, market_ids, domains, report }
    }
}

/// Builds the analysis grid from in-memory records.
pub fn assemble_grid(
    trades: &[TradeRecord],
    markets: &[MarketRecord],
    rules: &DomainRuleSet,
    bins: &BinningConfig,
    filt: &FilterConfig,
) -> Result<Grid, IngestError> {
    let mut builder = GridBuilder::new(markets, rules, bins, filt)?;
    for t in trades {
        builder.count(t);
    }
    let mut filler = builder.seal();
    for (i, t) in trades.iter().enumerate() {
        filler.add(t, i as u64 + 1);
    }
    Ok(filler.finish())
}
