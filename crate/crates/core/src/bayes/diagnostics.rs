//! Rank-normalized split-R-hat and bulk effective sample size.

use std::fmt::Write as _;

use serde::Serialize;

use super::{BayesError, PosteriorDraws};
use crate::scalar::median;
use crate::special::normal_quantile;

/// Each chain cut into two halves; the middle draw of an odd chain is dropped.
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of the pooled average ranks: `Phi^-1((r - 3/8) / (S + 1/4))`.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = Vec::new();
    for (c, xs) in chains.iter().enumerate() {
        pooled.extend(xs.iter().enumerate().map(|(i, &x)| (x, c, i)));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average
        let r = (i + j) as f64 / 2.0 + 1.0;
        let z = normal_quantile((r - 0.375) / (s + 0.25));
        for &(_, c, k) in &pooled[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Between/within potential scale reduction of equal-length chains.
fn rhat_basic(chains: &[Vec<f64>]) -> Option<f64> {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return None;
    }
    let b = n * sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Autocovariance at `lag` with divisor `n`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
fn ess_basic(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains[0].len();
    if n < 4 {
        return None;
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |t: usize| -> f64 { chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, t)).sum::<f64>() / m as f64 };
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return None;
    }
    let rho = |t: usize| 1.0 - (mean_var - acov(t)) / var_plus;
    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    // initial positive sequence over pairs (t+1, t+2)
    let mut t = 1;
    while t + 3 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    if t == 1 {
        // no pair examined: tau = -1 + rho(0) = 0, floored at 1 / log10(total)
        return Some(total * total.log10());
    }
    let max_t = t - 2;
    // a positive even term of the first rejected pair is kept
    if even > 0.0 {
        rho_hat[max_t + 1] = even;
    }
    // initial monotone sequence
    let mut t = 1;
    while t + 2 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    if rho_hat.iter().any(|r| r.is_nan()) {
        return None;
    }
    let tau = (-1.0 + 2.0 * rho_hat[..=max_t].iter().sum::<f64>() + rho_hat[max_t + 1]).max(1.0 / total.log10());
    Some(total / tau)
}

fn check_shape(chains: &[Vec<f64>]) -> bool {
    chains.len() >= 2 && chains[0].len() >= 4 && chains.iter().all(|c| c.len() == chains[0].len())
}

/// Larger of the bulk and folded rank-normalized split-R-hat; `None` for a
/// constant parameter or fewer than two chains of four draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if !check_shape(chains) {
        return None;
    }
    let split = split_chains(chains);
    let bulk = rhat_basic(&rank_normalize(&split))?;
    let all: Vec<f64> = split.iter().flatten().copied().collect();
    let med = median(&all);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|x| (x - med).abs()).collect()).collect();
    let tail = rhat_basic(&rank_normalize(&folded))?;
    Some(bulk.max(tail))
}

/// Effective sample size for the mean of the split chains, without rank normalization.
pub fn mean_ess(chains: &[Vec<f64>]) -> Option<f64> {
    if !check_shape(chains) {
        return None;
    }
    ess_basic(&split_chains(chains))
}

/// Effective sample size of the rank-normalized split chains.
pub fn bulk_ess(chains: &[Vec<f64>]) -> Option<f64> {
    if !check_shape(chains) {
        return None;
    }
    let split = split_chains(chains);
    if split.iter().flatten().all(|&x| x == split[0][0]) {
        return None;
    }
    ess_basic(&rank_normalize(&split))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDiagnostic {
    pub name: String,
    pub rhat: Option<f64>,
    /// Capped at the number of draws.
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub params: Vec<ParamDiagnostic>,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub divergences: usize,
    pub total_draws: usize,
}

pub fn diagnose(draws: &PosteriorDraws) -> Result<Diagnostics, BayesError> {
    let chains = draws.chains.len();
    if chains < 2 || draws.chains.iter().any(|c| c.draws.len() < 4) {
        return Err(BayesError::Mismatch("diagnostics need at least two chains of four draws".into()));
    }
    let total = draws.total_draws();
    let params: Vec<ParamDiagnostic> = draws
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let x = draws.param(j);
            ParamDiagnostic { name: name.clone(), rhat: split_rhat(&x), ess: bulk_ess(&x).map(|e| e.min(total as f64)) }
        })
        .collect();
    let max_rhat = params.iter().filter_map(|p| p.rhat).reduce(f64::max);
    let min_ess = params.iter().filter_map(|p| p.ess).reduce(f64::min);
    Ok(Diagnostics { params, max_rhat, min_ess, divergences: draws.divergences, total_draws: total })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

impl Diagnostics {
    /// `parameter,rhat,ess` rows then a `# summary` line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,rhat,ess\n");
        for p in &self.params {
            let _ = writeln!(s, "{},{},{}", p.name, opt(p.rhat), opt(p.ess));
        }
        let _ = writeln!(
            s,
            "# summary max_rhat={} min_ess={} divergences={} draws={}",
            opt(self.max_rhat),
            opt(self.min_ess),
            self.divergences,
            self.total_draws
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_share_a_rank() {
        let z = rank_normalize(&[vec![1.0, 2.0], vec![2.0, 3.0]]);
        assert_eq!(z[0][1], z[1][0]);
        assert!(z[0][0] < z[0][1] && z[0][1] < z[1][1]);
        assert!((z[0][0] + z[1][1]).abs() < 1e-12);
    }

    #[test]
    fn constant_chains_are_undefined() {
        let c = vec![vec![2.0; 10], vec![2.0; 10]];
        assert_eq!(split_rhat(&c), None);
        assert_eq!(bulk_ess(&c), None);
    }

    #[test]
    fn odd_chains_drop_the_middle_draw() {
        let s = split_chains(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]);
        assert_eq!(s, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
    }
}
