//! Bootstrap intervals for the within-horizon scale effect.
//!
//! Two designs: trades resampled independently within each cell, or whole
//! markets resampled from the domain. Every replicate owns an RNG stream
//! keyed by its index, so results do not depend on thread scheduling.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{fit_table, CalibError, FitConfig, PriceTable, WeightScheme};
use crate::ingest::{CellKey, Grid, LARGE, SINGLE};
use crate::scalar::quantile_sorted;

/// Above this failed fraction the estimand is reported as unstable.
pub const MAX_FAILED_FRACTION: f64 = 0.1;
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Error)]
pub enum ResampleError {
    #[error("invalid bootstrap configuration: {0}")]
    Config(String),
    #[error("domain {domain:?} lacks cells: {}", .missing.join(", "))]
    MissingCells { domain: String, missing: Vec<String> },
    #[error("point estimate failed in cell {cell}: {source}")]
    Point { cell: String, source: CalibError },
    #[error("{failed} of {replicates} replicates failed, above the {}% limit", MAX_FAILED_FRACTION * 100.0)]
    TooManyFailures { failed: usize, replicates: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMethod {
    /// Trades resampled within each cell; cell sizes are preserved.
    #[default]
    CellLevel,
    /// The domain's markets resampled with replacement, carrying all their trades.
    MarketClustered,
}

impl BootstrapMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BootstrapMethod::CellLevel => "cell_level",
            BootstrapMethod::MarketClustered => "market_clustered",
        }
    }
}

impl FromStr for BootstrapMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cell_level" | "cell" => Ok(BootstrapMethod::CellLevel),
            "market_clustered" | "clustered" | "market" => Ok(BootstrapMethod::MarketClustered),
            other => Err(format!("unknown bootstrap method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub method: BootstrapMethod,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 1000, method: BootstrapMethod::CellLevel, confidence: 0.95, seed: 0 }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), ResampleError> {
        if self.replicates < MIN_REPLICATES {
            return Err(ResampleError::Config(format!("replicates must be at least {MIN_REPLICATES}, got {}", self.replicates)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(ResampleError::Config(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    /// Successful replicates in replicate order.
    pub replicate_values: Vec<f64>,
    pub failed_replicates: usize,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Report row `domain,method,B,point,lower,upper,failed`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapRow {
    pub domain: String,
    pub method: String,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub failed: usize,
}

impl BootstrapRow {
    pub fn new(domain: &str, cfg: &BootstrapConfig, est: &IntervalEstimate) -> Self {
        BootstrapRow {
            domain: domain.to_string(),
            method: cfg.method.as_str().to_string(),
            replicates: cfg.replicates,
            point: est.point,
            lower: est.lower,
            upper: est.upper,
            failed: est.failed_replicates,
        }
    }
}

/// Cells entering the estimand: `(horizon, size_lo)` and `(horizon, size_hi)` for every horizon.
struct Design {
    keys: Vec<CellKey>,
    horizons: usize,
}

impl Design {
    fn new(grid: &Grid, domain: &str, horizons: usize, size_lo: usize, size_hi: usize) -> Result<Self, ResampleError> {
        let mut keys = Vec::with_capacity(2 * horizons);
        let mut missing = Vec::new();
        for t in 0..horizons {
            for s in [size_lo, size_hi] {
                let key = CellKey { domain: domain.to_string(), horizon_bin: t, size_bin: s };
                if !grid.cells.contains_key(&key) {
                    missing.push(format!("h{t}/s{s}"));
                }
                keys.push(key);
            }
        }
        if !missing.is_empty() {
            return Err(ResampleError::MissingCells { domain: domain.to_string(), missing });
        }
        Ok(Design { keys, horizons })
    }

    /// Mean over horizons of `b(hi) - b(lo)`; tables are ordered as `keys`.
    fn delta(&self, tables: &[PriceTable], fit_cfg: &FitConfig) -> Result<f64, (usize, CalibError)> {
        let mut sum = 0.0;
        for t in 0..self.horizons {
            let lo = fit_table::<f64>(&tables[2 * t], fit_cfg).map_err(|e| (2 * t, e))?;
            let hi = fit_table::<f64>(&tables[2 * t + 1], fit_cfg).map_err(|e| (2 * t + 1, e))?;
            sum += hi.b - lo.b;
        }
        Ok(sum / self.horizons as f64)
    }
}

/// Identical observations of one cell, merged: `(price, outcome, contracts per trade, multiplicity)`.
type Groups = Vec<(u8, bool, u64, u64)>;

/// Under trade weighting contract counts never reach the fit, so groups
/// ignore them; fewer groups means fewer binomial draws.
fn cell_groups(grid: &Grid, key: &CellKey, scheme: WeightScheme) -> Groups {
    let mut acc: BTreeMap<(u8, bool, u64), u64> = BTreeMap::new();
    for o in &grid.cells[key].observations {
        let c = if scheme == WeightScheme::Contract { o.count } else { 1 };
        *acc.entry((o.price_cents, o.outcome, c)).or_insert(0) += 1;
    }
    acc.into_iter().map(|((p, y, c), n)| (p, y, c, n)).collect()
}

/// Multinomial resample of `groups` to their total size, by conditional binomials.
fn resample_cell(groups: &Groups, rng: &mut impl Rng) -> PriceTable {
    let mut left: u64 = groups.iter().map(|g| g.3).sum();
    let mut mass = left;
    let mut table = PriceTable::default();
    for &(p, y, c, n) in groups {
        if left == 0 {
            break;
        }
        let k = if n == mass {
            left
        } else {
            Binomial::new(left, n as f64 / mass as f64).expect("probability in [0, 1]").sample(rng)
        };
        if k > 0 {
            table.add(p, y, k, k * c);
        }
        left -= k;
        mass -= n;
    }
    table
}

/// Per market, its contribution to each design cell.
struct Clusters {
    /// `(cell slot, price, outcome, contracts)` per trade.
    markets: Vec<Vec<(usize, u8, bool, u64)>>,
}

impl Clusters {
    fn new(grid: &Grid, design: &Design) -> Self {
        let slot: BTreeMap<&CellKey, usize> = design.keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let domain = &design.keys[0].domain;
        let mut by_market: BTreeMap<u32, Vec<(usize, u8, bool, u64)>> = BTreeMap::new();
        for (key, cell) in grid.cells.range(CellKey { domain: domain.clone(), horizon_bin: 0, size_bin: 0 }..) {
            if &key.domain != domain {
                break;
            }
            let s = slot.get(key).copied();
            for o in &cell.observations {
                let entry = by_market.entry(o.market).or_default();
                if let Some(s) = s {
                    entry.push((s, o.price_cents, o.outcome, o.count));
                }
            }
        }
        Clusters { markets: by_market.into_values().collect() }
    }

    fn resample(&self, cells: usize, rng: &mut impl Rng) -> Vec<PriceTable> {
        let m = self.markets.len();
        let mut mult = vec![0u64; m];
        for _ in 0..m {
            mult[rng.random_range(0..m)] += 1;
        }
        let mut tables = vec![PriceTable::default(); cells];
        for (trades, &k) in self.markets.iter().zip(&mult) {
            if k == 0 {
                continue;
            }
            for &(s, p, y, c) in trades {
                tables[s].add(p, y, k, k * c);
            }
        }
        tables
    }
}

fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// Bootstrap interval for the Single-to-Large scale effect of `domain`.
pub fn bootstrap_scale_effect(
    grid: &Grid,
    domain: &str,
    horizons: usize,
    cfg: &BootstrapConfig,
    fit_cfg: &FitConfig,
) -> Result<IntervalEstimate, ResampleError> {
    bootstrap_scale_effect_between(grid, domain, horizons, SINGLE, LARGE, cfg, fit_cfg)
}

/// Scale effect `mean_tau [b(tau, size_hi) - b(tau, size_lo)]` with a percentile interval.
///
/// Replicates whose refit fails (for example one outcome only) are dropped
/// and counted, never retried.
pub fn bootstrap_scale_effect_between(
    grid: &Grid,
    domain: &str,
    horizons: usize,
    size_lo: usize,
    size_hi: usize,
    cfg: &BootstrapConfig,
    fit_cfg: &FitConfig,
) -> Result<IntervalEstimate, ResampleError> {
    cfg.validate()?;
    fit_cfg.validate().map_err(|e| ResampleError::Config(e.to_string()))?;
    let design = Design::new(grid, domain, horizons, size_lo, size_hi)?;
    let tables: Vec<PriceTable> =
        design.keys.iter().map(|k| PriceTable::from_observations(&grid.cells[k].observations)).collect();
    let point = design.delta(&tables, fit_cfg).map_err(|(i, source)| {
        let k = &design.keys[i];
        ResampleError::Point { cell: format!("({}, h{}, s{})", k.domain, k.horizon_bin, k.size_bin), source }
    })?;

    let replicates: Vec<Option<f64>> = match cfg.method {
        BootstrapMethod::CellLevel => {
            let groups: Vec<Groups> = design.keys.iter().map(|k| cell_groups(grid, k, fit_cfg.weight_scheme)).collect();
            (0..cfg.replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replicate_rng(cfg.seed, r);
                    let tables: Vec<PriceTable> = groups.iter().map(|g| resample_cell(g, &mut rng)).collect();
                    design.delta(&tables, fit_cfg).ok()
                })
                .collect()
        }
        BootstrapMethod::MarketClustered => {
            let clusters = Clusters::new(grid, &design);
            (0..cfg.replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replicate_rng(cfg.seed, r);
                    design.delta(&clusters.resample(design.keys.len(), &mut rng), fit_cfg).ok()
                })
                .collect()
        }
    };
    let values: Vec<f64> = replicates.iter().flatten().copied().collect();
    let failed = replicates.len() - values.len();
    if failed as f64 > MAX_FAILED_FRACTION * cfg.replicates as f64 {
        return Err(ResampleError::TooManyFailures { failed, replicates: cfg.replicates });
    }
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - cfg.confidence;
    Ok(IntervalEstimate {
        point,
        lower: quantile_sorted(&sorted, alpha / 2.0),
        upper: quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        replicate_values: values,
        failed_replicates: failed,
    })
}
