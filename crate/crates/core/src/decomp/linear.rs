//! Least squares in the sum-to-zero constrained basis.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::components::ComponentSet;
use super::DecompError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    /// Horizon main effect (beyond the intercept).
    Mu,
    /// Domain main effect.
    Alpha,
    /// Domain by horizon, doubly centred.
    Beta,
    /// Domain by size, centred over size within each domain.
    Gamma,
    /// Size by horizon, shared by all domains.
    SizeHorizon,
}

pub const CANONICAL_ORDER: [Term; 4] = [Term::Mu, Term::Alpha, Term::Beta, Term::Gamma];

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::Mu => "mu",
            Term::Alpha => "alpha",
            Term::Beta => "beta",
            Term::Gamma => "gamma",
            Term::SizeHorizon => "size_horizon",
        }
    }

    /// Whether `self` is a higher-order term containing `other` as a margin.
    pub fn contains(self, other: Term) -> bool {
        matches!(
            (self, other),
            (Term::Beta, Term::Mu) | (Term::Beta, Term::Alpha) | (Term::Gamma, Term::Alpha) | (Term::SizeHorizon, Term::Mu)
        )
    }

    pub fn columns(self, dims: Dims) -> usize {
        let Dims { d, t, s } = dims;
        match self {
            Term::Mu => t - 1,
            Term::Alpha => d - 1,
            Term::Beta => (d - 1) * (t - 1),
            Term::Gamma => d * (s - 1),
            Term::SizeHorizon => (t - 1) * (s - 1),
        }
    }

    fn fill<T: Scalar>(self, dims: Dims, (d, t, s): (usize, usize, usize), out: &mut Vec<T>) {
        let cd = contrast::<T>(dims.d, d);
        let ct = contrast::<T>(dims.t, t);
        let cs = contrast::<T>(dims.s, s);
        match self {
            Term::Mu => out.extend(ct),
            Term::Alpha => out.extend(cd),
            Term::Beta => out.extend(cd.iter().flat_map(|&x| ct.iter().map(move |&y| x * y))),
            Term::Gamma => {
                for k in 0..dims.d {
                    let on = if k == d { T::one() } else { T::zero() };
                    out.extend(cs.iter().map(|&y| on * y));
                }
            }
            Term::SizeHorizon => out.extend(ct.iter().flat_map(|&x| cs.iter().map(move |&y| x * y))),
        }
    }
}

/// Sum-to-zero code of `level` among `k` levels: `e_level`, or all `-1` for the last level.
fn contrast<T: Scalar>(k: usize, level: usize) -> Vec<T> {
    (0..k - 1)
        .map(|j| {
            if level == k - 1 {
                -T::one()
            } else if j == level {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub t: usize,
    pub s: usize,
}

impl Dims {
    pub fn cells(self) -> usize {
        self.d * self.t * self.s
    }

    fn cell(self, i: usize) -> (usize, usize, usize) {
        (i / (self.t * self.s), (i / self.s) % self.t, i % self.s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsFit<T> {
    /// Intercept first, then each term's block in `layout` order.
    pub coef: Vec<T>,
    pub layout: Vec<(Term, Range<usize>)>,
    pub fitted: Vec<T>,
    /// Weighted residual sum of squares.
    pub rss: T,
}

impl<T: Scalar> LsFit<T> {
    pub fn block(&self, term: Term) -> Option<&[T]> {
        self.layout.iter().find(|(t, _)| *t == term).map(|(_, r)| &self.coef[r.clone()])
    }
}

/// Intercept plus `terms`, fitted by (weighted) normal equations.
pub fn least_squares<T: Scalar>(dims: Dims, y: &[T], w: Option<&[T]>, terms: &[Term]) -> Result<LsFit<T>, DecompError> {
    let mut layout = Vec::with_capacity(terms.len());
    let mut p = 1;
    for &term in terms {
        let k = term.columns(dims);
        layout.push((term, p..p + k));
        p += k;
    }
    let n = dims.cells();
    let mut xtx = vec![T::zero(); p * p];
    let mut xty = vec![T::zero(); p];
    let mut rows: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut row = Vec::with_capacity(p);
    for i in 0..n {
        row.clear();
        row.push(T::one());
        for &term in terms {
            term.fill(dims, dims.cell(i), &mut row);
        }
        let wi = w.map_or(T::one(), |w| w[i]);
        for a in 0..p {
            let xa = row[a] * wi;
            if xa == T::zero() {
                continue;
            }
            xty[a] += xa * y[i];
            for b in a..p {
                xtx[a * p + b] += xa * row[b];
            }
        }
        rows.push(row.clone());
    }
    for a in 0..p {
        for b in 0..a {
            xtx[a * p + b] = xtx[b * p + a];
        }
    }
    let coef = cholesky_solve(&mut xtx, &xty, p)?;
    let fitted: Vec<T> = rows.iter().map(|r| r.iter().zip(&coef).map(|(&x, &c)| x * c).sum()).collect();
    let rss = (0..n).map(|i| w.map_or(T::one(), |w| w[i]) * (y[i] - fitted[i]).powi(2)).sum();
    Ok(LsFit { coef, layout, fitted, rss })
}

/// Solves `A x = b` for symmetric positive definite `A` (overwritten by its factor).
fn cholesky_solve<T: Scalar>(a: &mut [T], b: &[T], p: usize) -> Result<Vec<T>, DecompError> {
    let max_diag = (0..p).map(|i| a[i * p + i].abs()).fold(T::zero(), T::max);
    let tol = T::epsilon().sqrt() * max_diag.max(T::one());
    let mut rank = 0;
    for j in 0..p {
        let mut djj = a[j * p + j];
        for k in 0..j {
            djj -= a[j * p + k] * a[j * p + k];
        }
        if !(djj > tol) {
            continue;
        }
        rank += 1;
        let ljj = djj.sqrt();
        a[j * p + j] = ljj;
        for i in j + 1..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = v / ljj;
        }
    }
    if rank < p {
        return Err(DecompError::RankDeficient { rank, columns: p });
    }
    let mut z = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            let v = a[i * p + k] * z[k];
            z[i] -= v;
        }
        z[i] /= a[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            let v = a[k * p + i] * z[k];
            z[i] -= v;
        }
        z[i] /= a[i * p + i];
    }
    Ok(z)
}

/// Decodes a canonical-model fit into constrained components.
pub fn components_from_ls<T: Scalar>(fit: &LsFit<T>, dims: Dims, domains: Vec<String>, y: &[T]) -> ComponentSet<T> {
    let Dims { d: nd, t: nt, s: ns } = dims;
    let expand = |k: usize, c: &[T]| -> Vec<T> { (0..k).map(|l| contrast::<T>(k, l).iter().zip(c).map(|(&x, &v)| x * v).sum()).collect() };
    let zeros = |n: usize| vec![T::zero(); n];
    let intercept = fit.coef[0];
    let mu: Vec<T> = match fit.block(Term::Mu) {
        Some(c) => expand(nt, c).into_iter().map(|v| v + intercept).collect(),
        None => vec![intercept; nt],
    };
    let alpha = fit.block(Term::Alpha).map_or_else(|| zeros(nd), |c| expand(nd, c));
    let mut beta = zeros(nd * nt);
    if let Some(c) = fit.block(Term::Beta) {
        for d in 0..nd {
            let cd = contrast::<T>(nd, d);
            for t in 0..nt {
                let ct = contrast::<T>(nt, t);
                let mut v = T::zero();
                for (i, &x) in cd.iter().enumerate() {
                    for (j, &yv) in ct.iter().enumerate() {
                        v += x * yv * c[i * (nt - 1) + j];
                    }
                }
                beta[d * nt + t] = v;
            }
        }
    }
    let mut gamma = zeros(nd * ns);
    if let Some(c) = fit.block(Term::Gamma) {
        for d in 0..nd {
            let g = expand(ns, &c[d * (ns - 1)..(d + 1) * (ns - 1)]);
            gamma[d * ns..(d + 1) * ns].copy_from_slice(&g);
        }
    }
    let residual = y.iter().zip(&fit.fitted).map(|(&a, &b)| a - b).collect();
    ComponentSet { domains, horizons: nt, sizes: ns, mu, alpha, beta, gamma, residual }
}
