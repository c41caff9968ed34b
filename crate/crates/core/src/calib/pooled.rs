//! Fits over arbitrary groupings of observations: pooled, leave-one-out,
//! per horizon, whole-grid, and the trade- vs contract-weighting gap.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::fit::{fit_table, CalibrationFit, FitConfig};
use super::table::{PriceTable, WeightScheme};
use super::CalibError;
use crate::ingest::{CellKey, Grid, Observation};
use crate::scalar::Scalar;

pub fn pooled_slope<'a, T: Scalar>(
    observations: impl IntoIterator<Item = &'a Observation>,
    cfg: &FitConfig,
) -> Result<CalibrationFit<T>, CalibError> {
    fit_table(&PriceTable::from_observations(observations), cfg)
}

/// For each label, a fit on the union of every other group.
pub fn leave_one_out<T: Scalar>(
    groups: &BTreeMap<String, Vec<Observation>>,
    cfg: &FitConfig,
) -> Result<BTreeMap<String, Result<CalibrationFit<T>, CalibError>>, CalibError> {
    if groups.len() < 2 {
        return Err(CalibError::TooFewGroups(groups.len()));
    }
    let tables: Vec<(&String, PriceTable)> =
        groups.iter().map(|(k, v)| (k, PriceTable::from_observations(v))).collect();
    let mut total = PriceTable::default();
    for (_, t) in &tables {
        total.merge(t);
    }
    Ok(tables
        .par_iter()
        .map(|(label, t)| ((*label).clone(), fit_table(&total.subtract(t), cfg)))
        .collect())
}

/// Fits every cell, in parallel; results do not depend on scheduling.
pub fn fit_grid<T: Scalar>(grid: &Grid, cfg: &FitConfig) -> BTreeMap<CellKey, Result<CalibrationFit<T>, CalibError>> {
    grid.cells
        .par_iter()
        .map(|(k, cell)| (k.clone(), fit_table(&PriceTable::from_observations(&cell.observations), cfg)))
        .collect()
}

/// One domain's observations at one horizon, pooled over size bins.
pub fn horizon_table(grid: &Grid, domain: &str, horizon_bin: usize) -> Option<PriceTable> {
    let mut t = PriceTable::default();
    let mut any = false;
    for (k, cell) in &grid.cells {
        if k.domain == domain && k.horizon_bin == horizon_bin {
            any = true;
            for o in &cell.observations {
                t.add(o.price_cents, o.outcome, 1, o.count);
            }
        }
    }
    any.then_some(t)
}

/// Per-(domain, horizon) slopes pooled over sizes.
pub fn horizon_slopes<T: Scalar>(
    grid: &Grid,
    horizon_bins: usize,
    cfg: &FitConfig,
) -> Vec<(String, usize, Result<CalibrationFit<T>, CalibError>)> {
    let jobs: Vec<(String, usize)> = grid
        .domains
        .iter()
        .flat_map(|d| (0..horizon_bins).map(move |h| (d.clone(), h)))
        .collect();
    jobs.into_par_iter()
        .filter_map(|(d, h)| {
            let t = horizon_table(grid, &d, h)?;
            Some((d, h, fit_table(&t, cfg)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapBin<T> {
    pub horizon_bin: usize,
    pub b_trade: T,
    pub b_contract: T,
    /// `b_contract - b_trade`.
    pub gap: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightingGap<T> {
    pub domain: String,
    pub bins: Vec<GapBin<T>>,
    /// Bins with no data, or whose fit failed under either scheme.
    pub skipped: Vec<usize>,
    /// Mean gap over the fitted bins.
    pub mean_gap: T,
}

impl<T: Scalar> WeightingGap<T> {
    pub fn peak(&self) -> Option<&GapBin<T>> {
        self.bins.iter().max_by(|x, y| x.gap.partial_cmp(&y.gap).unwrap_or(std::cmp::Ordering::Equal))
    }
}

/// Contract- minus trade-weighted slope per horizon bin, both fitted from the same cells.
pub fn weighting_gap<T: Scalar>(grid: &Grid, domain: &str, horizon_bins: usize, cfg: &FitConfig) -> WeightingGap<T> {
    let mut bins = Vec::new();
    let mut skipped = Vec::new();
    for h in 0..horizon_bins {
        let Some(t) = horizon_table(grid, domain, h) else {
            skipped.push(h);
            continue;
        };
        let trade = fit_table::<T>(&t, &cfg.with_scheme(WeightScheme::Trade));
        let contract = fit_table::<T>(&t, &cfg.with_scheme(WeightScheme::Contract));
        match (trade, contract) {
            (Ok(ft), Ok(fc)) => bins.push(GapBin { horizon_bin: h, b_trade: ft.b, b_contract: fc.b, gap: fc.b - ft.b }),
            _ => skipped.push(h),
        }
    }
    let mean_gap = if bins.is_empty() {
        T::nan()
    } else {
        bins.iter().map(|g| g.gap).sum::<T>() / T::from_usize_lossy(bins.len())
    };
    WeightingGap { domain: domain.to_string(), bins, skipped, mean_gap }
}

/// One row of the per-cell calibration matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFitRow {
    pub domain: String,
    pub horizon_bin: usize,
    pub size_bin: usize,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub loglik: f64,
    pub converged: bool,
}

impl CellFitRow {
    pub fn new<T: Scalar>(key: &CellKey, fit: &CalibrationFit<T>) -> Self {
        CellFitRow {
            domain: key.domain.clone(),
            horizon_bin: key.horizon_bin,
            size_bin: key.size_bin,
            n: fit.n,
            a: fit.a.to_f64_lossy(),
            b: fit.b.to_f64_lossy(),
            se_a: fit.se_a.to_f64_lossy(),
            se_b: fit.se_b.to_f64_lossy(),
            loglik: fit.loglik.to_f64_lossy(),
            converged: fit.converged,
        }
    }
}
