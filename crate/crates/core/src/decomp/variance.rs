use serde::{Deserialize, Serialize};

use super::components::{fit_sequential, ComponentSet};
use super::linear::{components_from_ls, least_squares, Dims, Term, CANONICAL_ORDER};
use super::slopes::SlopeGrid;
use super::DecompError;
use crate::ingest::Grid;
use crate::scalar::{median, Scalar};
use crate::special::f_upper_tail;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SsType {
    I,
    II,
    III,
}

impl std::str::FromStr for SsType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(SsType::I),
            "II" | "2" => Ok(SsType::II),
            "III" | "3" => Ok(SsType::III),
            other => Err(format!("unknown sum-of-squares type {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow<T> {
    pub component: Term,
    pub ss: T,
    pub marginal_r2: T,
    /// Running sum of `marginal_r2` in table order.
    pub cumulative_r2: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceTable<T> {
    pub decomposition_type: SsType,
    pub weighted: bool,
    pub ss_total: T,
    pub ss_residual: T,
    /// `1 - ss_residual / ss_total` of the full model.
    pub total_r2: T,
    pub rows: Vec<VarianceRow<T>>,
}

fn dims<T: Scalar>(grid: &SlopeGrid<T>) -> Dims {
    Dims { d: grid.d(), t: grid.horizons, s: grid.sizes }
}

fn ss_about_mean<T: Scalar>(y: &[T], w: Option<&[T]>) -> T {
    let wt = |i: usize| w.map_or(T::one(), |w| w[i]);
    let sw: T = (0..y.len()).map(wt).sum();
    let m = (0..y.len()).map(|i| wt(i) * y[i]).sum::<T>() / sw;
    (0..y.len()).map(|i| wt(i) * (y[i] - m).powi(2)).sum()
}

fn table<T: Scalar>(
    ty: SsType,
    weighted: bool,
    ss_total: T,
    ss_residual: T,
    parts: Vec<(Term, T)>,
) -> VarianceTable<T> {
    let mut cum = T::zero();
    let rows = parts
        .into_iter()
        .map(|(component, ss)| {
            let marginal_r2 = ss / ss_total;
            cum += marginal_r2;
            VarianceRow { component, ss, marginal_r2, cumulative_r2: cum }
        })
        .collect();
    VarianceTable { decomposition_type: ty, weighted, ss_total, ss_residual, total_r2: T::one() - ss_residual / ss_total, rows }
}

fn attribute<T: Scalar>(grid: &SlopeGrid<T>, order: &[Term], ty: SsType, w: Option<&[T]>) -> Result<VarianceTable<T>, DecompError> {
    let y = grid.require_complete()?;
    let dims = dims(grid);
    let rss = |terms: &[Term]| least_squares(dims, &y, w, terms).map(|f| f.rss);
    let ss_total = ss_about_mean(&y, w);
    let ss_residual = rss(order)?;
    let mut parts = Vec::with_capacity(order.len());
    match ty {
        SsType::I => {
            let mut prev = ss_total;
            for k in 0..order.len() {
                let r = rss(&order[..=k])?;
                parts.push((order[k], prev - r));
                prev = r;
            }
        }
        SsType::II => {
            for &term in order {
                let without_higher: Vec<Term> = order.iter().copied().filter(|o| !o.contains(term)).collect();
                let reduced: Vec<Term> = without_higher.iter().copied().filter(|&o| o != term).collect();
                parts.push((term, rss(&reduced)? - rss(&without_higher)?));
            }
        }
        SsType::III => {
            for &term in order {
                let reduced: Vec<Term> = order.iter().copied().filter(|&o| o != term).collect();
                parts.push((term, rss(&reduced)? - ss_residual));
            }
        }
    }
    Ok(table(ty, w.is_some(), ss_total, ss_residual, parts))
}

/// Variance attribution for the model with intercept plus `order`.
pub fn variance_decomposition<T: Scalar>(grid: &SlopeGrid<T>, order: &[Term], ty: SsType) -> Result<VarianceTable<T>, DecompError> {
    attribute(grid, order, ty, None)
}

/// Type I table straight from sequential-projection components.
pub fn sequential_variance<T: Scalar>(grid: &SlopeGrid<T>, c: &ComponentSet<T>) -> Result<VarianceTable<T>, DecompError> {
    let y = grid.require_complete()?;
    let ss = component_ss(c, &y);
    let parts = CANONICAL_ORDER.iter().zip(ss).map(|(&t, v)| (t, v)).collect();
    let ss_residual = c.residual.iter().map(|&e| e * e).sum();
    Ok(table(SsType::I, false, ss_about_mean(&y, None), ss_residual, parts))
}

/// Per-cell sums of squares of `mu - grand mean`, `alpha`, `beta`, `gamma`.
pub fn component_ss<T: Scalar>(c: &ComponentSet<T>, y: &[T]) -> [T; 4] {
    let (nd, nt, ns) = (c.d(), c.horizons, c.sizes);
    let grand = y.iter().copied().sum::<T>() / T::from_usize_lossy(y.len());
    let mut ss = [T::zero(); 4];
    for d in 0..nd {
        for t in 0..nt {
            for s in 0..ns {
                ss[0] += (c.mu[t] - grand).powi(2);
                ss[1] += c.alpha[d].powi(2);
                ss[2] += c.beta[d * nt + t].powi(2);
                ss[3] += c.gamma[d * ns + s].powi(2);
            }
        }
    }
    ss
}

/// Inverse-variance weighted fit and its Type I table about the weighted mean.
pub fn fit_wls<T: Scalar>(grid: &SlopeGrid<T>) -> Result<(ComponentSet<T>, VarianceTable<T>), DecompError> {
    let w = grid.weights()?;
    let y = grid.require_complete()?;
    let dims = dims(grid);
    let fit = least_squares(dims, &y, Some(&w), &CANONICAL_ORDER)?;
    let comps = components_from_ls(&fit, dims, grid.domains.clone(), &y);
    let table = attribute(grid, &CANONICAL_ORDER, SsType::I, Some(&w))?;
    Ok((comps, table))
}

/// Unweighted least-squares fit of the canonical model.
pub fn fit_ols<T: Scalar>(grid: &SlopeGrid<T>) -> Result<ComponentSet<T>, DecompError> {
    let y = grid.require_complete()?;
    let dims = dims(grid);
    let fit = least_squares(dims, &y, None, &CANONICAL_ORDER)?;
    Ok(components_from_ls(&fit, dims, grid.domains.clone(), &y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FRow<T> {
    pub source: String,
    pub ss: T,
    pub df: usize,
    pub ms: T,
    pub f: T,
    pub p_value: T,
    pub partial_eta2: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FTable<T> {
    pub rows: Vec<FRow<T>>,
    pub residual_ss: T,
    pub residual_df: usize,
    pub residual_ms: T,
}

/// F statistics from explicit sums of squares and degrees of freedom.
pub fn f_table<T: Scalar>(sources: &[(&str, T, usize)], residual_ss: T, residual_df: i64) -> Result<FTable<T>, DecompError> {
    if residual_df <= 0 {
        return Err(DecompError::NoResidualDf(residual_df));
    }
    let rdf = residual_df as usize;
    let residual_ms = residual_ss / T::from_usize_lossy(rdf);
    let rows = sources
        .iter()
        .map(|&(name, ss, df)| {
            let ms = ss / T::from_usize_lossy(df);
            let f = ms / residual_ms;
            let (p_value, partial_eta2) = if ss == T::zero() {
                (T::one(), T::zero())
            } else {
                (f_upper_tail(f, T::from_usize_lossy(df), T::from_usize_lossy(rdf)), ss / (ss + residual_ss))
            };
            FRow { source: name.to_string(), ss, df, ms, f, p_value, partial_eta2 }
        })
        .collect();
    Ok(FTable { rows, residual_ss, residual_df: rdf, residual_ms })
}

/// F-tests of the four components against the sequential-projection residual.
pub fn f_tests<T: Scalar>(grid: &SlopeGrid<T>, c: &ComponentSet<T>) -> Result<FTable<T>, DecompError> {
    let y = grid.require_complete()?;
    let d = dims(grid);
    let ss = component_ss(c, &y);
    let df: Vec<usize> = CANONICAL_ORDER.iter().map(|t| t.columns(d)).collect();
    let rdf = d.cells() as i64 - 1 - df.iter().sum::<usize>() as i64;
    let sources: Vec<(&str, T, usize)> = (0..4).map(|k| (CANONICAL_ORDER[k].name(), ss[k], df[k])).collect();
    f_table(&sources, c.residual.iter().map(|&e| e * e).sum(), rdf)
}

/// Text rendering of a p-value; values below `1e-300` print as a bound.
pub fn format_p_value(p: f64) -> String {
    if p < 1e-300 {
        "< 1e-300".to_string()
    } else {
        format!("{p:.3e}")
    }
}

/// Numeric form of a p-value for CSV output; values below `1e-300` store as 0.
pub fn numeric_p_value(p: f64) -> f64 {
    if p < 1e-300 {
        0.0
    } else {
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeHorizonCheck<T> {
    /// R^2 gained by adding the shared size-by-horizon term to the full model.
    pub added_r2: T,
    /// Type III R^2 of gamma without, then with, the size-by-horizon term.
    pub gamma_r2_without_interaction: T,
    pub gamma_r2_with_interaction: T,
    /// Median hours to close per (domain, size bin); `None` when no trades.
    pub median_horizon_hours: Vec<(String, Vec<Option<f64>>)>,
}

pub fn size_horizon_check<T: Scalar>(grid: &SlopeGrid<T>, cells: &Grid) -> Result<SizeHorizonCheck<T>, DecompError> {
    let with: Vec<Term> = CANONICAL_ORDER.iter().copied().chain([Term::SizeHorizon]).collect();
    let base = variance_decomposition(grid, &CANONICAL_ORDER, SsType::III)?;
    let ext = variance_decomposition(grid, &with, SsType::III)?;
    let gamma_r2 = |t: &VarianceTable<T>| t.rows.iter().find(|r| r.component == Term::Gamma).map(|r| r.marginal_r2).unwrap_or_else(T::nan);
    let mut medians = Vec::new();
    for name in &grid.domains {
        let mut per_size = Vec::with_capacity(grid.sizes);
        for s in 0..grid.sizes {
            let hours: Vec<f64> = cells
                .cells
                .iter()
                .filter(|(k, _)| &k.domain == name && k.size_bin == s)
                .flat_map(|(_, c)| c.observations.iter().map(|o| o.horizon_ms as f64 / 3_600_000.0))
                .collect();
            per_size.push((!hours.is_empty()).then(|| median(&hours)));
        }
        medians.push((name.clone(), per_size));
    }
    Ok(SizeHorizonCheck {
        added_r2: ext.total_r2 - base.total_r2,
        gamma_r2_without_interaction: gamma_r2(&base),
        gamma_r2_with_interaction: gamma_r2(&ext),
        median_horizon_hours: medians,
    })
}

/// Sequential components, the Type I table, and F-tests in one call.
pub fn decompose<T: Scalar>(grid: &SlopeGrid<T>) -> Result<(ComponentSet<T>, VarianceTable<T>, FTable<T>), DecompError> {
    let c = fit_sequential(grid)?;
    let v = sequential_variance(grid, &c)?;
    let f = f_tests(grid, &c)?;
    Ok((c, v, f))
}
