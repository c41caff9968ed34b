//! Hierarchical slope model and its analytic gradient.
//!
//! `theta(d, tau, s) ~ N(mu(tau) + alpha(d) + beta(d, tau) + delta(d) * s~(s), sigma^2)`
//! with `alpha = sigma_alpha * H_D a`, `beta = sigma_beta * H_D B H_T'` and
//! `delta = sigma_delta * r`, where `H_n` is an orthonormal basis of the vectors
//! summing to zero. Raw coordinates are standard normal; positive scales are
//! sampled on the log scale under half-Cauchy priors.

use serde::{Deserialize, Serialize};

use super::BayesError;
use crate::decomp::SlopeGrid;
use crate::scalar::Scalar;

/// Positive scales in coordinate order.
pub const SCALE_NAMES: [&str; 4] = ["sigma_alpha", "sigma_beta", "sigma_delta", "sigma"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesModelSpec {
    pub mu_prior_mean: f64,
    pub mu_prior_sd: f64,
    /// Half-Cauchy scale shared by the four hyperpriors.
    pub hyperprior_scale: f64,
    /// Representative log trade size per size bin, centred to sum to zero.
    pub centred_log_sizes: Vec<f64>,
    /// Centre beta over horizons as well as domains.
    pub beta_doubly_centred: bool,
    /// Hold `(sigma_alpha, sigma_beta, sigma_delta, sigma)` fixed instead of sampling them.
    pub fixed_scales: Option<[f64; 4]>,
}

impl Default for BayesModelSpec {
    fn default() -> Self {
        BayesModelSpec {
            mu_prior_mean: 1.0,
            mu_prior_sd: 0.5,
            hyperprior_scale: 1.0,
            centred_log_sizes: crate::ingest::BinningConfig::default().centred_log_sizes(),
            beta_doubly_centred: true,
            fixed_scales: None,
        }
    }
}

impl BayesModelSpec {
    pub fn validate(&self) -> Result<(), BayesError> {
        if !(self.mu_prior_sd > 0.0) || !(self.hyperprior_scale > 0.0) || !self.mu_prior_mean.is_finite() {
            return Err(BayesError::Spec("prior scales must be positive and the prior mean finite".into()));
        }
        let sum: f64 = self.centred_log_sizes.iter().sum();
        if sum.abs() > 1e-9 * (1.0 + self.centred_log_sizes.iter().map(|x| x.abs()).sum::<f64>()) {
            return Err(BayesError::Spec(format!("centred log sizes sum to {sum}, not zero")));
        }
        if let Some(s) = self.fixed_scales {
            if s.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(BayesError::Spec("fixed scales must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Orthonormal `n x (n - 1)` basis of the sum-to-zero subspace (Helmert), row-major.
pub fn sum_to_zero_basis<T: Scalar>(n: usize) -> Vec<T> {
    let k = n.saturating_sub(1);
    let mut h = vec![T::zero(); n * k];
    for j in 0..k {
        let m = (j + 1) as f64;
        let norm = (m * (m + 1.0)).sqrt();
        for i in 0..=j {
            h[i * k + j] = T::lit(1.0 / norm);
        }
        h[(j + 1) * k + j] = T::lit(-m / norm);
    }
    h
}

/// Parameters on the constrained scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams<T> {
    pub mu: Vec<T>,
    pub alpha: Vec<T>,
    /// Index `d * T + tau`.
    pub beta: Vec<T>,
    pub delta: Vec<T>,
    pub sigma_alpha: T,
    pub sigma_beta: T,
    pub sigma_delta: T,
    pub sigma: T,
}

impl<T: Scalar> ModelParams<T> {
    /// Flattened in the order of [`HierarchicalModel::param_names`].
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.mu.len() + self.alpha.len() + self.beta.len() + self.delta.len() + 4);
        v.extend(&self.mu);
        v.extend(&self.alpha);
        v.extend(&self.beta);
        v.extend(&self.delta);
        v.extend([self.sigma_alpha, self.sigma_beta, self.sigma_delta, self.sigma]);
        v
    }
}

/// Where each block lives in the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub mu: usize,
    pub alpha: usize,
    pub beta: usize,
    pub delta: usize,
    /// Start of the four log scales; equal to `dim` when scales are fixed.
    pub scales: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct HierarchicalModel<T> {
    pub spec: BayesModelSpec,
    pub domains: Vec<String>,
    pub horizons: usize,
    pub sizes: usize,
    /// Observed slopes in grid layout; `None` cells carry no likelihood term.
    pub observed: Vec<Option<T>>,
    pub layout: Layout,
    hd: Vec<T>,
    ht: Vec<T>,
    sizes_c: Vec<T>,
}

impl<T: Scalar> HierarchicalModel<T> {
    /// Model over a complete grid.
    pub fn new(spec: BayesModelSpec, grid: &SlopeGrid<T>) -> Result<Self, BayesError> {
        let missing = grid.missing();
        if !missing.is_empty() {
            return Err(BayesError::IncompleteGrid(missing));
        }
        let observed = grid.cells.iter().map(|c| c.as_ref().map(|c| c.theta)).collect();
        Self::with_observed(spec, grid.domains.clone(), grid.horizons, grid.sizes, observed)
    }

    /// Model where only some cells enter the likelihood; all `None` gives the prior.
    pub fn with_observed(
        spec: BayesModelSpec,
        domains: Vec<String>,
        horizons: usize,
        sizes: usize,
        observed: Vec<Option<T>>,
    ) -> Result<Self, BayesError> {
        spec.validate()?;
        let nd = domains.len();
        if nd < 2 || horizons < 2 || sizes == 0 {
            return Err(BayesError::Spec("need at least two domains and two horizons".into()));
        }
        if spec.centred_log_sizes.len() != sizes {
            return Err(BayesError::Spec(format!("{} centred log sizes for {sizes} size bins", spec.centred_log_sizes.len())));
        }
        if observed.len() != nd * horizons * sizes {
            return Err(BayesError::Spec("observed cells do not match the grid dimensions".into()));
        }
        if observed.iter().flatten().any(|x| !x.is_finite()) {
            return Err(BayesError::Spec("observed slopes must be finite".into()));
        }
        let nb = if spec.beta_doubly_centred { (nd - 1) * (horizons - 1) } else { (nd - 1) * horizons };
        let mu = 0;
        let alpha = horizons;
        let beta = alpha + nd - 1;
        let delta = beta + nb;
        let scales = delta + nd;
        let dim = if spec.fixed_scales.is_some() { scales } else { scales + 4 };
        let sizes_c = spec.centred_log_sizes.iter().map(|&x| T::lit(x)).collect();
        Ok(HierarchicalModel {
            spec,
            domains,
            horizons,
            sizes,
            observed,
            layout: Layout { mu, alpha, beta, delta, scales, dim },
            hd: sum_to_zero_basis(nd),
            ht: sum_to_zero_basis(horizons),
            sizes_c,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn d(&self) -> usize {
        self.domains.len()
    }

    /// Names of the constrained parameters, in output order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.horizons).map(|t| format!("mu[{t}]")).collect();
        names.extend(self.domains.iter().map(|d| format!("alpha[{d}]")));
        for d in &self.domains {
            names.extend((0..self.horizons).map(|t| format!("beta[{d}][{t}]")));
        }
        names.extend(self.domains.iter().map(|d| format!("delta[{d}]")));
        names.extend(SCALE_NAMES.iter().map(|s| s.to_string()));
        names
    }

    fn scales(&self, x: &[T]) -> [T; 4] {
        match self.spec.fixed_scales {
            Some(s) => s.map(T::lit),
            None => {
                let o = self.layout.scales;
                [x[o].exp(), x[o + 1].exp(), x[o + 2].exp(), x[o + 3].exp()]
            }
        }
    }

    /// `sigma_beta`-free beta matrix: `H_D B H_T'` (or `H_D B`), row-major `D x T`.
    fn beta_unit(&self, raw: &[T]) -> Vec<T> {
        let (nd, nt) = (self.d(), self.horizons);
        let k = nd - 1;
        // c = B H_T' is (D-1) x T, or B itself when singly centred
        let c: Vec<T> = if self.spec.beta_doubly_centred {
            let kt = nt - 1;
            let mut c = vec![T::zero(); k * nt];
            for i in 0..k {
                for t in 0..nt {
                    c[i * nt + t] = (0..kt).map(|j| raw[i * kt + j] * self.ht[t * kt + j]).sum();
                }
            }
            c
        } else {
            raw.to_vec()
        };
        let mut beta = vec![T::zero(); nd * nt];
        for d in 0..nd {
            for t in 0..nt {
                beta[d * nt + t] = (0..k).map(|i| self.hd[d * k + i] * c[i * nt + t]).sum();
            }
        }
        beta
    }

    pub fn constrain(&self, x: &[T]) -> ModelParams<T> {
        let l = self.layout;
        let (nd, nt) = (self.d(), self.horizons);
        let [sa, sb, sd, s] = self.scales(x);
        let raw_a = &x[l.alpha..l.beta];
        let alpha = (0..nd).map(|d| sa * (0..nd - 1).map(|i| self.hd[d * (nd - 1) + i] * raw_a[i]).sum::<T>()).collect();
        let beta = self.beta_unit(&x[l.beta..l.delta]).into_iter().map(|b| sb * b).collect();
        let delta = x[l.delta..l.scales].iter().map(|&r| sd * r).collect();
        ModelParams { mu: x[l.mu..l.mu + nt].to_vec(), alpha, beta, delta, sigma_alpha: sa, sigma_beta: sb, sigma_delta: sd, sigma: s }
    }

    /// Inverse of [`Self::constrain`] for parameters that satisfy the constraints.
    pub fn unconstrain(&self, p: &ModelParams<T>) -> Vec<T> {
        let l = self.layout;
        let (nd, nt) = (self.d(), self.horizons);
        let (k, kt) = (nd - 1, nt - 1);
        let mut x = vec![T::zero(); l.dim];
        x[..nt].copy_from_slice(&p.mu);
        for i in 0..k {
            x[l.alpha + i] = (0..nd).map(|d| self.hd[d * k + i] * p.alpha[d]).sum::<T>() / p.sigma_alpha;
        }
        // B = H_D' beta H_T / sigma_beta
        let mut hb = vec![T::zero(); k * nt];
        for i in 0..k {
            for t in 0..nt {
                hb[i * nt + t] = (0..nd).map(|d| self.hd[d * k + i] * p.beta[d * nt + t]).sum::<T>() / p.sigma_beta;
            }
        }
        if self.spec.beta_doubly_centred {
            for i in 0..k {
                for j in 0..kt {
                    x[l.beta + i * kt + j] = (0..nt).map(|t| hb[i * nt + t] * self.ht[t * kt + j]).sum();
                }
            }
        } else {
            x[l.beta..l.delta].copy_from_slice(&hb);
        }
        for d in 0..nd {
            x[l.delta + d] = p.delta[d] / p.sigma_delta;
        }
        if self.spec.fixed_scales.is_none() {
            for (j, s) in [p.sigma_alpha, p.sigma_beta, p.sigma_delta, p.sigma].into_iter().enumerate() {
                x[l.scales + j] = s.ln();
            }
        }
        x
    }

    /// Inverse of [`ModelParams::to_vec`].
    pub fn params_from_constrained(&self, v: &[T]) -> Result<ModelParams<T>, BayesError> {
        let (nd, nt) = (self.d(), self.horizons);
        let n = nt + 2 * nd + nd * nt + 4;
        if v.len() != n {
            return Err(BayesError::Mismatch(format!("constrained vector has {} entries, expected {n}", v.len())));
        }
        let (b, d, s) = (nt + nd, nt + nd + nd * nt, nt + 2 * nd + nd * nt);
        Ok(ModelParams {
            mu: v[..nt].to_vec(),
            alpha: v[nt..b].to_vec(),
            beta: v[b..d].to_vec(),
            delta: v[d..s].to_vec(),
            sigma_alpha: v[s],
            sigma_beta: v[s + 1],
            sigma_delta: v[s + 2],
            sigma: v[s + 3],
        })
    }

    /// Cell mean under constrained parameters.
    pub fn cell_mean(&self, p: &ModelParams<T>, d: usize, t: usize, s: usize) -> T {
        p.mu[t] + p.alpha[d] + p.beta[d * self.horizons + t] + p.delta[d] * self.sizes_c[s]
    }

    /// Log joint density (with all normalizing constants) and its gradient.
    pub fn log_posterior_and_gradient(&self, x: &[T]) -> Result<(T, Vec<T>), BayesError> {
        if x.len() != self.layout.dim {
            return Err(BayesError::Spec(format!("parameter vector has {} coordinates, expected {}", x.len(), self.layout.dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BayesError::NonFiniteInput);
        }
        let mut grad = vec![T::zero(); x.len()];
        let lp = self.eval(x, &mut grad);
        Ok((lp, grad))
    }

    /// As [`Self::log_posterior_and_gradient`] without checks; writes into `grad`.
    pub fn eval(&self, x: &[T], grad: &mut [T]) -> T {
        let l = self.layout;
        let (nd, nt, ns) = (self.d(), self.horizons, self.sizes);
        let k = nd - 1;
        let half_ln_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let p = self.constrain(x);
        let [sa, sb, sd, s] = [p.sigma_alpha, p.sigma_beta, p.sigma_delta, p.sigma];
        let inv_var = T::one() / (s * s);

        // likelihood, accumulated by the block each cell feeds
        let mut lp = T::zero();
        let mut g_mu = vec![T::zero(); nt];
        let mut g_alpha = vec![T::zero(); nd];
        let mut g_beta = vec![T::zero(); nd * nt];
        let mut g_delta = vec![T::zero(); nd];
        let mut n_obs = 0usize;
        let mut rss = T::zero();
        for d in 0..nd {
            for t in 0..nt {
                for si in 0..ns {
                    let Some(y) = self.observed[(d * nt + t) * ns + si] else { continue };
                    let r = y - self.cell_mean(&p, d, t, si);
                    n_obs += 1;
                    rss += r * r;
                    let g = r * inv_var;
                    g_mu[t] += g;
                    g_alpha[d] += g;
                    g_beta[d * nt + t] += g;
                    g_delta[d] += g * self.sizes_c[si];
                }
            }
        }
        let n = T::from_usize_lossy(n_obs);
        lp += -n * (s.ln() + half_ln_2pi) - rss * inv_var / T::lit(2.0);

        // mu prior
        let (m0, s0) = (T::lit(self.spec.mu_prior_mean), T::lit(self.spec.mu_prior_sd));
        for t in 0..nt {
            let z = (p.mu[t] - m0) / s0;
            lp += -z * z / T::lit(2.0) - s0.ln() - half_ln_2pi;
            grad[l.mu + t] = g_mu[t] - z / s0;
        }

        // standard-normal raw coordinates
        for i in l.alpha..l.scales {
            lp += -x[i] * x[i] / T::lit(2.0) - half_ln_2pi;
            grad[i] = -x[i];
        }
        for i in 0..k {
            grad[l.alpha + i] += sa * (0..nd).map(|d| self.hd[d * k + i] * g_alpha[d]).sum::<T>();
        }
        // d/dB of sum(g_beta . H_D B H_T') is H_D' g_beta H_T
        let mut hg = vec![T::zero(); k * nt];
        for i in 0..k {
            for t in 0..nt {
                hg[i * nt + t] = (0..nd).map(|d| self.hd[d * k + i] * g_beta[d * nt + t]).sum();
            }
        }
        if self.spec.beta_doubly_centred {
            let kt = nt - 1;
            for i in 0..k {
                for j in 0..kt {
                    grad[l.beta + i * kt + j] += sb * (0..nt).map(|t| hg[i * nt + t] * self.ht[t * kt + j]).sum::<T>();
                }
            }
        } else {
            for (g, h) in grad[l.beta..l.delta].iter_mut().zip(&hg) {
                *g += sb * *h;
            }
        }
        for d in 0..nd {
            grad[l.delta + d] += sd * g_delta[d];
        }

        if self.spec.fixed_scales.is_none() {
            // each block is proportional to its scale, so d/du = sum(block . grad block)
            let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
            let lik_u = [
                dot(&p.alpha, &g_alpha),
                dot(&p.beta, &g_beta),
                dot(&p.delta, &g_delta),
                -n + rss * inv_var,
            ];
            let a = T::lit(self.spec.hyperprior_scale);
            let log_norm = (T::lit(2.0) / (T::PI() * a)).ln();
            for j in 0..4 {
                let u = x[l.scales + j];
                let r = u.exp() / a;
                // half-Cauchy density of exp(u) times the Jacobian exp(u)
                lp += log_norm - (r * r).ln_1p() + u;
                grad[l.scales + j] = lik_u[j] + T::one() - T::lit(2.0) * r * r / (T::one() + r * r);
            }
        }
        lp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn helmert_basis_is_orthonormal_and_centred() {
        for n in 2..8 {
            let h = sum_to_zero_basis::<f64>(n);
            let k = n - 1;
            for i in 0..k {
                assert!((0..n).map(|r| h[r * k + i]).sum::<f64>().abs() < 1e-12);
                for j in 0..k {
                    let dot: f64 = (0..n).map(|r| h[r * k + i] * h[r * k + j]).sum();
                    assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn default_dimension_is_sixty_four() {
        let domains: Vec<String> = (0..6).map(|d| format!("D{d}")).collect();
        let m = HierarchicalModel::<f64>::with_observed(BayesModelSpec::default(), domains, 9, 4, vec![None; 216]).unwrap();
        assert_eq!(m.dim(), 64);
        assert_eq!(m.param_names().len(), 79);
    }
}
