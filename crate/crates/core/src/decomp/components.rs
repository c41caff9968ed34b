use serde::Serialize;

use super::slopes::SlopeGrid;
use super::DecompError;
use crate::scalar::Scalar;

/// `theta(d, tau, s) = mu(tau) + alpha(d) + beta(d, tau) + gamma(d, s) + eps`.
///
/// Constraints: `sum_d alpha = 0`; `beta` sums to zero over `d` for every
/// `tau` and over `tau` for every `d`; `gamma` sums to zero over `s` for every `d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentSet<T> {
    pub domains: Vec<String>,
    pub horizons: usize,
    pub sizes: usize,
    pub mu: Vec<T>,
    pub alpha: Vec<T>,
    /// Index `d * T + tau`.
    pub beta: Vec<T>,
    /// Index `d * S + s`.
    pub gamma: Vec<T>,
    /// Same layout as [`SlopeGrid::cells`].
    pub residual: Vec<T>,
}

impl<T: Scalar> ComponentSet<T> {
    /// Projects arbitrary arrays onto the constraint set; residuals are zero.
    pub fn centred(domains: Vec<String>, mu: Vec<T>, alpha: Vec<T>, beta: Vec<T>, gamma: Vec<T>) -> Self {
        let (nd, nt) = (domains.len(), mu.len());
        let ns = gamma.len() / nd.max(1);
        let dd = T::from_usize_lossy(nd);
        let a_mean = alpha.iter().copied().sum::<T>() / dd;
        let alpha = alpha.iter().map(|&a| a - a_mean).collect();
        let mut b = beta;
        let row_mean: Vec<T> = (0..nd).map(|d| (0..nt).map(|t| b[d * nt + t]).sum::<T>() / T::from_usize_lossy(nt)).collect();
        let col_mean: Vec<T> = (0..nt).map(|t| (0..nd).map(|d| b[d * nt + t]).sum::<T>() / dd).collect();
        let grand = row_mean.iter().copied().sum::<T>() / dd;
        for d in 0..nd {
            for t in 0..nt {
                b[d * nt + t] = b[d * nt + t] - row_mean[d] - col_mean[t] + grand;
            }
        }
        let mut g = gamma;
        for d in 0..nd {
            let m = (0..ns).map(|s| g[d * ns + s]).sum::<T>() / T::from_usize_lossy(ns);
            for s in 0..ns {
                g[d * ns + s] -= m;
            }
        }
        ComponentSet { domains, horizons: nt, sizes: ns, mu, alpha, beta: b, gamma: g, residual: vec![T::zero(); nd * nt * ns] }
    }

    pub fn d(&self) -> usize {
        self.domains.len()
    }

    pub fn fitted(&self, d: usize, t: usize, s: usize) -> T {
        self.mu[t] + self.alpha[d] + self.beta[d * self.horizons + t] + self.gamma[d * self.sizes + s]
    }

    /// Noiseless grid `fitted + residual`, unit standard errors.
    pub fn generate(&self) -> SlopeGrid<T> {
        let (nt, ns) = (self.horizons, self.sizes);
        SlopeGrid::from_fn(self.domains.clone(), nt, ns, |d, t, s| self.fitted(d, t, s) + self.residual[(d * nt + t) * ns + s])
    }

    /// Largest violation of the identifying constraints.
    pub fn constraint_violation(&self) -> T {
        let (nd, nt, ns) = (self.d(), self.horizons, self.sizes);
        let mut worst = self.alpha.iter().copied().sum::<T>().abs();
        for t in 0..nt {
            worst = worst.max((0..nd).map(|d| self.beta[d * nt + t]).sum::<T>().abs());
        }
        for d in 0..nd {
            worst = worst.max((0..nt).map(|t| self.beta[d * nt + t]).sum::<T>().abs());
            worst = worst.max((0..ns).map(|s| self.gamma[d * ns + s]).sum::<T>().abs());
        }
        worst
    }

    /// Largest absolute difference in any component.
    pub fn max_abs_diff(&self, other: &ComponentSet<T>) -> T {
        let pairs = [
            (&self.mu, &other.mu),
            (&self.alpha, &other.alpha),
            (&self.beta, &other.beta),
            (&self.gamma, &other.gamma),
            (&self.residual, &other.residual),
        ];
        pairs
            .iter()
            .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(&u, &v)| (u - v).abs()))
            .fold(T::zero(), T::max)
    }
}

/// Sequential projection by means: mu, then alpha, beta, gamma on the residuals.
pub fn fit_sequential<T: Scalar>(grid: &SlopeGrid<T>) -> Result<ComponentSet<T>, DecompError> {
    let theta = grid.require_complete()?;
    let (nd, nt, ns) = (grid.d(), grid.horizons, grid.sizes);
    let idx = |d: usize, t: usize, s: usize| (d * nt + t) * ns + s;
    let (fd, ft, fs) = (T::from_usize_lossy(nd), T::from_usize_lossy(nt), T::from_usize_lossy(ns));

    let mu: Vec<T> = (0..nt)
        .map(|t| (0..nd).flat_map(|d| (0..ns).map(move |s| (d, s))).map(|(d, s)| theta[idx(d, t, s)]).sum::<T>() / (fd * fs))
        .collect();
    let mut r: Vec<T> = theta.clone();
    for d in 0..nd {
        for t in 0..nt {
            for s in 0..ns {
                r[idx(d, t, s)] -= mu[t];
            }
        }
    }
    let alpha: Vec<T> = (0..nd)
        .map(|d| (0..nt).flat_map(|t| (0..ns).map(move |s| (t, s))).map(|(t, s)| r[idx(d, t, s)]).sum::<T>() / (ft * fs))
        .collect();
    for d in 0..nd {
        for i in idx(d, 0, 0)..idx(d + 1, 0, 0) {
            r[i] -= alpha[d];
        }
    }
    let mut beta = vec![T::zero(); nd * nt];
    for d in 0..nd {
        for t in 0..nt {
            let b = (0..ns).map(|s| r[idx(d, t, s)]).sum::<T>() / fs;
            beta[d * nt + t] = b;
            for s in 0..ns {
                r[idx(d, t, s)] -= b;
            }
        }
    }
    let mut gamma = vec![T::zero(); nd * ns];
    for d in 0..nd {
        for s in 0..ns {
            let g = (0..nt).map(|t| r[idx(d, t, s)]).sum::<T>() / ft;
            gamma[d * ns + s] = g;
            for t in 0..nt {
                r[idx(d, t, s)] -= g;
            }
        }
    }
    Ok(ComponentSet { domains: grid.domains.clone(), horizons: nt, sizes: ns, mu, alpha, beta, gamma, residual: r })
}

/// One row of the components report: `component,level_1,level_2,value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentRow {
    pub component: &'static str,
    pub level_1: String,
    pub level_2: String,
    pub value: f64,
}

pub fn component_rows<T: Scalar>(c: &ComponentSet<T>) -> Vec<ComponentRow> {
    let (nt, ns) = (c.horizons, c.sizes);
    let row = |component, level_1: String, level_2: String, v: T| ComponentRow { component, level_1, level_2, value: v.to_f64_lossy() };
    let mut out = Vec::new();
    for t in 0..nt {
        out.push(row("mu", t.to_string(), String::new(), c.mu[t]));
    }
    for (d, name) in c.domains.iter().enumerate() {
        out.push(row("alpha", name.clone(), String::new(), c.alpha[d]));
    }
    for (d, name) in c.domains.iter().enumerate() {
        for t in 0..nt {
            out.push(row("beta", name.clone(), t.to_string(), c.beta[d * nt + t]));
        }
    }
    for (d, name) in c.domains.iter().enumerate() {
        for s in 0..ns {
            out.push(row("gamma", name.clone(), s.to_string(), c.gamma[d * ns + s]));
        }
    }
    out
}

/// One row of the augmented calibration matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentedRow {
    pub domain: String,
    pub horizon_bin: usize,
    pub size_bin: usize,
    pub theta: f64,
    pub se: f64,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub fitted: f64,
    pub residual: f64,
}

pub fn augmented_rows<T: Scalar>(grid: &SlopeGrid<T>, c: &ComponentSet<T>) -> Vec<AugmentedRow> {
    let (nt, ns) = (c.horizons, c.sizes);
    let mut out = Vec::with_capacity(grid.len());
    for (d, name) in c.domains.iter().enumerate() {
        for t in 0..nt {
            for s in 0..ns {
                let cell = grid.get(d, t, s);
                out.push(AugmentedRow {
                    domain: name.clone(),
                    horizon_bin: t,
                    size_bin: s,
                    theta: cell.map_or(f64::NAN, |x| x.theta.to_f64_lossy()),
                    se: cell.map_or(f64::NAN, |x| x.se.to_f64_lossy()),
                    mu: c.mu[t].to_f64_lossy(),
                    alpha: c.alpha[d].to_f64_lossy(),
                    beta: c.beta[d * nt + t].to_f64_lossy(),
                    gamma: c.gamma[d * ns + s].to_f64_lossy(),
                    fitted: c.fitted(d, t, s).to_f64_lossy(),
                    residual: c.residual[(d * nt + t) * ns + s].to_f64_lossy(),
                });
            }
        }
    }
    out
}
