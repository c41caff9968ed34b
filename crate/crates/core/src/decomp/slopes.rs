use std::collections::BTreeMap;

use serde::Serialize;

use super::DecompError;
use crate::calib::{CalibError, CalibrationFit};
use crate::ingest::CellKey;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellSlope<T> {
    pub theta: T,
    pub se: T,
    pub n: usize,
}

/// Fitted slopes on a D x T x S grid; index `(d * T + tau) * S + s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeGrid<T> {
    pub domains: Vec<String>,
    pub horizons: usize,
    pub sizes: usize,
    pub cells: Vec<Option<CellSlope<T>>>,
}

impl<T: Scalar> SlopeGrid<T> {
    pub fn empty(domains: Vec<String>, horizons: usize, sizes: usize) -> Self {
        let n = domains.len() * horizons * sizes;
        SlopeGrid { domains, horizons, sizes, cells: vec![None; n] }
    }

    /// A complete grid from a dense `theta[d][tau][s]` closure, unit standard errors.
    pub fn from_fn(domains: Vec<String>, horizons: usize, sizes: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut g = Self::empty(domains, horizons, sizes);
        for d in 0..g.domains.len() {
            for t in 0..horizons {
                for s in 0..sizes {
                    let i = g.index(d, t, s);
                    g.cells[i] = Some(CellSlope { theta: f(d, t, s), se: T::one(), n: 0 });
                }
            }
        }
        g
    }

    /// Places fitted cells; failed fits and unknown domains leave gaps.
    pub fn from_fits(
        domains: Vec<String>,
        horizons: usize,
        sizes: usize,
        fits: &BTreeMap<CellKey, Result<CalibrationFit<T>, CalibError>>,
    ) -> Self {
        let mut g = Self::empty(domains, horizons, sizes);
        for (k, fit) in fits {
            let Ok(fit) = fit else { continue };
            let Some(d) = g.domain_index(&k.domain) else { continue };
            if k.horizon_bin < horizons && k.size_bin < sizes {
                let i = g.index(d, k.horizon_bin, k.size_bin);
                g.cells[i] = Some(CellSlope { theta: fit.b, se: fit.se_b, n: fit.n });
            }
        }
        g
    }

    pub fn d(&self) -> usize {
        self.domains.len()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn index(&self, d: usize, t: usize, s: usize) -> usize {
        (d * self.horizons + t) * self.sizes + s
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|x| x == name)
    }

    pub fn get(&self, d: usize, t: usize, s: usize) -> Option<&CellSlope<T>> {
        self.cells[self.index(d, t, s)].as_ref()
    }

    pub fn cell_label(&self, d: usize, t: usize, s: usize) -> String {
        format!("({}, h{}, s{})", self.domains[d], t, s)
    }

    pub fn missing(&self) -> Vec<String> {
        let mut out = Vec::new();
        for d in 0..self.d() {
            for t in 0..self.horizons {
                for s in 0..self.sizes {
                    if self.get(d, t, s).is_none() {
                        out.push(self.cell_label(d, t, s));
                    }
                }
            }
        }
        out
    }

    /// Observed slopes of a complete grid, in index order.
    pub fn require_complete(&self) -> Result<Vec<T>, DecompError> {
        let missing = self.missing();
        if !missing.is_empty() {
            return Err(DecompError::Incomplete(missing));
        }
        Ok(self.cells.iter().map(|c| c.as_ref().map(|c| c.theta).unwrap_or_else(T::nan)).collect())
    }

    /// Inverse-variance weights of a complete grid.
    pub fn weights(&self) -> Result<Vec<T>, DecompError> {
        self.require_complete()?;
        let mut w = Vec::with_capacity(self.len());
        for d in 0..self.d() {
            for t in 0..self.horizons {
                for s in 0..self.sizes {
                    let se = self.get(d, t, s).map(|c| c.se).unwrap_or_else(T::nan);
                    if !(se > T::zero()) || !se.is_finite() {
                        return Err(DecompError::DegenerateWeight(self.cell_label(d, t, s)));
                    }
                    w.push(T::one() / (se * se));
                }
            }
        }
        Ok(w)
    }
}
