//! Posterior summaries, the comparison with the frequentist decomposition, and
//! posterior predictive checks.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{BayesError, HierarchicalModel, PosteriorDraws};
use crate::decomp::{ComponentSet, SlopeGrid};
use crate::scalar::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean, standard deviation and equal-tailed 95% interval of every parameter.
pub fn summarize(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    let n = draws.total_draws();
    draws
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut xs: Vec<f64> = draws.iter_draws().map(|d| d[j]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt() } else { 0.0 };
            xs.sort_by(f64::total_cmp);
            ParamSummary { name: name.clone(), mean, sd, lower: quantile_sorted(&xs, 0.025), upper: quantile_sorted(&xs, 0.975) }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaComparison {
    pub domain: String,
    pub posterior_mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub frequentist: f64,
    pub difference: f64,
}

/// Posterior domain intercepts next to the sequential-projection estimates.
pub fn compare_alpha(summary: &[ParamSummary], freq: &ComponentSet<f64>) -> Result<Vec<AlphaComparison>, BayesError> {
    freq.domains
        .iter()
        .zip(&freq.alpha)
        .map(|(d, &a)| {
            let name = format!("alpha[{d}]");
            let s = summary.iter().find(|s| s.name == name).ok_or_else(|| BayesError::Mismatch(format!("no posterior for {name}")))?;
            Ok(AlphaComparison {
                domain: d.clone(),
                posterior_mean: s.mean,
                lower: s.lower,
                upper: s.upper,
                frequentist: a,
                difference: s.mean - a,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellCheck {
    pub domain: String,
    pub horizon: usize,
    pub size: usize,
    pub observed: f64,
    pub lower: f64,
    pub upper: f64,
    pub within: bool,
    /// Fraction of replicated slopes above the observed one.
    pub ppc_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainCoverage {
    pub domain: String,
    pub within: usize,
    pub cells: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PpcResult {
    pub cells: Vec<CellCheck>,
    pub domains: Vec<DomainCoverage>,
    pub within: usize,
    pub coverage: f64,
}

/// Replicates every observed cell once per draw from `N(cell mean, sigma^2)`
/// and checks the observation against the central 95% predictive interval.
/// Cell `i` draws from stream `i` of `seed`.
pub fn posterior_predictive(
    draws: &PosteriorDraws,
    model: &HierarchicalModel<f64>,
    grid: &SlopeGrid<f64>,
    seed: u64,
) -> Result<PpcResult, BayesError> {
    let (nd, nt, ns) = (model.d(), model.horizons, model.sizes);
    if grid.domains != model.domains || grid.horizons != nt || grid.sizes != ns {
        return Err(BayesError::Mismatch("grid dimensions differ from the model".into()));
    }
    if draws.names.len() != model.param_names().len() || draws.total_draws() == 0 {
        return Err(BayesError::Mismatch("draws do not belong to this model".into()));
    }
    // constrained layout: mu[T], alpha[D], beta[D*T], delta[D], 4 scales
    let (o_alpha, o_beta) = (nt, nt + nd);
    let o_delta = o_beta + nd * nt;
    let o_sigma = o_delta + nd + 3;
    let s_c = &model.spec.centred_log_sizes;
    let cells: Vec<CellCheck> = (0..grid.cells.len())
        .into_par_iter()
        .filter_map(|i| {
            let obs = grid.cells[i].as_ref()?.theta;
            let (d, t, s) = (i / (nt * ns), (i / ns) % nt, i % ns);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut rep: Vec<f64> = draws
                .iter_draws()
                .map(|x| {
                    let m = x[t] + x[o_alpha + d] + x[o_beta + d * nt + t] + x[o_delta + d] * s_c[s];
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + x[o_sigma] * z
                })
                .collect();
            let above = rep.iter().filter(|&&r| r > obs).count();
            rep.sort_by(f64::total_cmp);
            let (lower, upper) = (quantile_sorted(&rep, 0.025), quantile_sorted(&rep, 0.975));
            Some(CellCheck {
                domain: grid.domains[d].clone(),
                horizon: t,
                size: s,
                observed: obs,
                lower,
                upper,
                within: lower <= obs && obs <= upper,
                ppc_p: above as f64 / rep.len() as f64,
            })
        })
        .collect();
    let domains = grid
        .domains
        .iter()
        .map(|name| {
            let mine: Vec<&CellCheck> = cells.iter().filter(|c| &c.domain == name).collect();
            let within = mine.iter().filter(|c| c.within).count();
            DomainCoverage {
                domain: name.clone(),
                within,
                cells: mine.len(),
                coverage: if mine.is_empty() { f64::NAN } else { within as f64 / mine.len() as f64 },
            }
        })
        .collect();
    let within = cells.iter().filter(|c| c.within).count();
    let coverage = if cells.is_empty() { f64::NAN } else { within as f64 / cells.len() as f64 };
    Ok(PpcResult { cells, domains, within, coverage })
}

/// `chain,iter,<names>` with one row per kept draw.
pub fn draws_csv(draws: &PosteriorDraws) -> String {
    let mut s = String::from("chain,iter");
    for n in &draws.names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (c, chain) in draws.chains.iter().enumerate() {
        for (i, d) in chain.draws.iter().enumerate() {
            let _ = write!(s, "{c},{i}");
            for v in d {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::super::ChainDraws;
    use super::*;

    #[test]
    fn constant_draws_summarize_to_a_point() {
        let chain = ChainDraws { draws: vec![vec![0.25]; 50], stats: Vec::new(), step_size: 1.0 };
        let d = PosteriorDraws { names: vec!["c".into()], chains: vec![chain.clone(), chain], divergences: 0, high_divergence: false };
        let s = &summarize(&d)[0];
        assert_eq!((s.mean, s.sd, s.lower, s.upper), (0.25, 0.0, 0.25, 0.25));
    }
}
