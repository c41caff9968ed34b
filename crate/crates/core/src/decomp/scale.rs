use serde::{Deserialize, Serialize};

use super::slopes::SlopeGrid;
use super::DecompError;
use crate::calib::{fit_table, FitConfig, PriceTable};
use crate::ingest::{Grid, LARGE, SINGLE};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleVariant {
    /// Mean over horizons of the per-horizon Large minus Single difference.
    WithinHorizon,
    /// Large minus Single slope, each pooled over all horizons.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleEffect<T> {
    pub domain: String,
    pub delta: T,
    /// Empty for the aggregate variant.
    pub per_horizon_diffs: Vec<T>,
    pub size_lo: usize,
    pub size_hi: usize,
    pub variant: ScaleVariant,
}

/// Mean of `hi[t] - lo[t]`.
pub fn within_horizon_delta<T: Scalar>(lo: &[T], hi: &[T]) -> T {
    let n = T::from_usize_lossy(lo.len());
    lo.iter().zip(hi).map(|(&l, &h)| h - l).sum::<T>() / n
}

/// Within-horizon scale effect between two size bins (default Single and Large).
pub fn scale_effect<T: Scalar>(grid: &SlopeGrid<T>, domain: &str, size_lo: usize, size_hi: usize) -> Result<ScaleEffect<T>, DecompError> {
    let d = grid.domain_index(domain).ok_or_else(|| DecompError::UnknownDomain(domain.to_string()))?;
    for s in [size_lo, size_hi] {
        if s >= grid.sizes {
            return Err(DecompError::SizeOutOfRange(s));
        }
    }
    let mut missing = Vec::new();
    let mut diffs = Vec::with_capacity(grid.horizons);
    for t in 0..grid.horizons {
        match (grid.get(d, t, size_lo), grid.get(d, t, size_hi)) {
            (Some(lo), Some(hi)) => diffs.push(hi.theta - lo.theta),
            (lo, hi) => {
                if lo.is_none() {
                    missing.push(grid.cell_label(d, t, size_lo));
                }
                if hi.is_none() {
                    missing.push(grid.cell_label(d, t, size_hi));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(DecompError::Incomplete(missing));
    }
    let delta = diffs.iter().copied().sum::<T>() / T::from_usize_lossy(diffs.len());
    Ok(ScaleEffect { domain: domain.to_string(), delta, per_horizon_diffs: diffs, size_lo, size_hi, variant: ScaleVariant::WithinHorizon })
}

pub fn default_scale_effect<T: Scalar>(grid: &SlopeGrid<T>, domain: &str) -> Result<ScaleEffect<T>, DecompError> {
    scale_effect(grid, domain, SINGLE, LARGE)
}

/// Aggregate variant: refits each size bin pooled over every horizon.
pub fn scale_effect_aggregate<T: Scalar>(
    cells: &Grid,
    domain: &str,
    size_lo: usize,
    size_hi: usize,
    cfg: &FitConfig,
) -> Result<ScaleEffect<T>, DecompError> {
    if !cells.domains.iter().any(|d| d == domain) {
        return Err(DecompError::UnknownDomain(domain.to_string()));
    }
    let pooled = |s: usize| {
        let obs = cells.cells.iter().filter(|(k, _)| k.domain == domain && k.size_bin == s).flat_map(|(_, c)| &c.observations);
        fit_table::<T>(&PriceTable::from_observations(obs), cfg)
            .map_err(|source| DecompError::Refit { what: format!("{domain} size bin {s}"), source })
    };
    let lo = pooled(size_lo)?;
    let hi = pooled(size_hi)?;
    Ok(ScaleEffect {
        domain: domain.to_string(),
        delta: hi.b - lo.b,
        per_horizon_diffs: Vec::new(),
        size_lo,
        size_hi,
        variant: ScaleVariant::Aggregate,
    })
}
