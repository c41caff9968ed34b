//! Reading inputs and the CSV artifacts that commands exchange.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use marketcal::bayes::{ChainDraws, PosteriorDraws};
use marketcal::calib::{CalibError, CalibrationFit};
use marketcal::decomp::{CellSlope, SlopeGrid};
use marketcal::ingest::{
    assemble_grid, horizon_label, parse_markets, parse_trades, size_label, CellKey, DomainRuleSet, ErrorLedger, FilterConfig,
    Grid, InputFormat, MarketRecord, TradeRecord,
};
use serde::{Deserialize, Serialize};

use crate::config::{require, InputPaths, PipelineConfig};
use crate::error::{CliError, Result};
use crate::output::Run;

pub struct Dataset {
    pub trades: Vec<TradeRecord>,
    pub markets: Vec<MarketRecord>,
    pub rules: DomainRuleSet,
    pub trade_ledger: ErrorLedger,
    pub market_ledger: ErrorLedger,
    pub trade_rows: u64,
    pub market_rows: u64,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path.display(), e))
}

pub fn load_rules(path: &Path) -> Result<DomainRuleSet> {
    Ok(DomainRuleSet::from_csv(open(path)?)?)
}

/// Loads one dataset; `section` names the config table in error messages.
/// `fallback_rules` stand in when the section names no rules file.
pub fn load_dataset(run: &mut Run, input: &InputPaths, section: &str, fallback_rules: Option<&Path>) -> Result<Dataset> {
    let trades_path = require(&input.trades, &format!("{section}.trades"))?;
    let markets_path = require(&input.markets, &format!("{section}.markets"))?;
    let rules_path = match (&input.rules, fallback_rules) {
        (Some(p), _) => p.as_path(),
        (None, Some(p)) => p,
        (None, None) => require(&None, &format!("{section}.rules"))?,
    };
    for p in [trades_path, markets_path, rules_path] {
        run.input(p)?;
    }
    let rules = load_rules(rules_path)?;
    let fmt: InputFormat = input.format;
    let trades = parse_trades(open(trades_path)?, fmt).map_err(|e| CliError::Data(format!("{}: {e}", trades_path.display())))?;
    let markets =
        parse_markets(open(markets_path)?, fmt).map_err(|e| CliError::Data(format!("{}: {e}", markets_path.display())))?;
    for (what, ledger) in [("trade", &trades.ledger), ("market", &markets.ledger)] {
        if !ledger.is_empty() {
            run.warn(format!("{} malformed {what} rows skipped", ledger.len()));
        }
    }
    Ok(Dataset {
        trades: trades.records,
        markets: markets.records,
        rules,
        trade_ledger: trades.ledger,
        market_ledger: markets.ledger,
        trade_rows: trades.rows_seen,
        market_rows: markets.rows_seen,
    })
}

pub fn assemble(ds: &Dataset, cfg: &PipelineConfig, filter: &FilterConfig) -> Result<Grid> {
    Ok(assemble_grid(&ds.trades, &ds.markets, &ds.rules, &cfg.binning, filter)?)
}

/// Domains of the calibration matrix: every named domain of the rules, in
/// rule order, so absent domains show up as missing rows.
pub fn matrix_domains(rules: &DomainRuleSet, filter: &FilterConfig) -> Vec<String> {
    let mut d = rules.domains();
    if !filter.exclude_fallback_domain {
        d.push(rules.fallback_domain.clone());
    }
    d
}

/// One row of `cells.csv`. Numeric fields are empty unless `status` is `ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub domain: String,
    pub horizon_bin: usize,
    pub size_bin: usize,
    pub horizon: String,
    pub size: String,
    pub status: String,
    pub n: Option<usize>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub se_a: Option<f64>,
    pub se_b: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: Option<bool>,
    pub error: String,
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_MISSING: &str = "missing";
pub const STATUS_FAILED: &str = "failed";

/// The full `domains x horizons x sizes` matrix in grid order.
pub fn cell_rows(
    domains: &[String],
    horizons: usize,
    sizes: usize,
    fits: &BTreeMap<CellKey, std::result::Result<CalibrationFit<f64>, CalibError>>,
) -> Vec<CellRow> {
    let mut rows = Vec::with_capacity(domains.len() * horizons * sizes);
    for d in domains {
        for h in 0..horizons {
            for s in 0..sizes {
                let key = CellKey { domain: d.clone(), horizon_bin: h, size_bin: s };
                let mut row = CellRow {
                    domain: d.clone(),
                    horizon_bin: h,
                    size_bin: s,
                    horizon: horizon_label(h),
                    size: size_label(s),
                    status: STATUS_MISSING.into(),
                    n: None,
                    a: None,
                    b: None,
                    se_a: None,
                    se_b: None,
                    loglik: None,
                    converged: None,
                    error: String::new(),
                };
                match fits.get(&key) {
                    Some(Ok(f)) => {
                        row.status = STATUS_OK.into();
                        row.n = Some(f.n);
                        row.a = Some(f.a);
                        row.b = Some(f.b);
                        row.se_a = Some(f.se_a);
                        row.se_b = Some(f.se_b);
                        row.loglik = Some(f.loglik);
                        row.converged = Some(f.converged);
                    }
                    Some(Err(e)) => {
                        row.status = STATUS_FAILED.into();
                        row.error = e.to_string();
                    }
                    None => {}
                }
                rows.push(row);
            }
        }
    }
    rows
}

/// Reads `cells.csv` back; domains keep their first-appearance order.
pub fn read_cells(path: &Path, cfg: &PipelineConfig) -> Result<(SlopeGrid<f64>, Vec<CellRow>)> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize::<CellRow>().enumerate() {
        rows.push(r.map_err(|e| CliError::Data(format!("{} row {}: {e}", path.display(), i + 2)))?);
    }
    let (nt, ns) = (cfg.binning.horizon_bins(), cfg.binning.size_bins());
    let mut domains: Vec<String> = Vec::new();
    for r in &rows {
        if !domains.contains(&r.domain) {
            domains.push(r.domain.clone());
        }
    }
    let mut grid = SlopeGrid::empty(domains, nt, ns);
    for r in &rows {
        if r.horizon_bin >= nt || r.size_bin >= ns {
            return Err(CliError::Data(format!(
                "{}: cell ({}, {}, {}) lies outside the {nt} x {ns} binning",
                path.display(),
                r.domain,
                r.horizon_bin,
                r.size_bin
            )));
        }
        if r.status != STATUS_OK {
            continue;
        }
        let (Some(theta), Some(se), Some(n)) = (r.b, r.se_b, r.n) else {
            return Err(CliError::Data(format!("{}: ok row without b, se_b and n", path.display())));
        };
        let d = grid.domain_index(&r.domain).expect("collected above");
        let i = grid.index(d, r.horizon_bin, r.size_bin);
        grid.cells[i] = Some(CellSlope { theta, se, n });
    }
    Ok((grid, rows))
}

/// Reads `draws.csv`; the columns must be exactly `chain,iter,<names>`.
pub fn read_draws(path: &Path, names: &[String]) -> Result<PosteriorDraws> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| CliError::io(path.display(), e))?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got.len() != names.len() + 2 || got[0] != "chain" || got[1] != "iter" || got[2..].iter().zip(names).any(|(a, b)| a != b) {
        return Err(CliError::Data(format!("{}: columns do not match the model parameters", path.display())));
    }
    let mut chains: Vec<ChainDraws> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::Data(format!("{} line {line}: {e}", path.display())))?;
        let bad = |what: &str| CliError::Data(format!("{} line {line}: {what}", path.display()));
        let chain: usize = rec[0].parse().map_err(|_| bad("bad chain index"))?;
        let iter: usize = rec[1].parse().map_err(|_| bad("bad iteration index"))?;
        if chain == chains.len() {
            chains.push(ChainDraws { draws: Vec::new(), stats: Vec::new(), step_size: f64::NAN });
        }
        if chain + 1 != chains.len() || iter != chains[chain].draws.len() {
            return Err(bad("draws must be sorted by chain then iteration"));
        }
        let x: Vec<f64> = rec.iter().skip(2).map(|v| v.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad value"))?;
        chains[chain].draws.push(x);
    }
    if chains.is_empty() {
        return Err(CliError::Data(format!("{}: no draws", path.display())));
    }
    Ok(PosteriorDraws { names: names.to_vec(), chains, divergences: 0, high_divergence: false })
}
