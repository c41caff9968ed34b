//! Hierarchical Bayesian model of the cell slopes, fitted by dynamic-trajectory
//! Hamiltonian Monte Carlo.

mod diagnostics;
mod model;
mod nuts;
mod summary;

pub use diagnostics::{bulk_ess, diagnose, mean_ess, rank_normalize, split_rhat, Diagnostics, ParamDiagnostic};
pub use model::{sum_to_zero_basis, BayesModelSpec, HierarchicalModel, Layout, ModelParams, SCALE_NAMES};
pub use nuts::{energy_drift, run_chain, run_chains, ChainOutput, IterStats, LogDensity, SamplerConfig, WarmupSchedule, MAX_DELTA_H};
pub use summary::{
    compare_alpha, draws_csv, posterior_predictive, summarize, AlphaComparison, CellCheck, DomainCoverage, ParamSummary, PpcResult,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::decomp::{CellSlope, SlopeGrid};

/// Post-warmup divergence fraction above which a fit is flagged.
pub const DIVERGENCE_WARNING_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("invalid model: {0}")]
    Spec(String),
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("slope grid is incomplete; missing {}", .0.join(", "))]
    IncompleteGrid(Vec<String>),
    #[error("non-finite parameter coordinate")]
    NonFiniteInput,
    #[error("sampler failed: {0}")]
    Sampler(String),
    #[error("draws do not match the grid: {0}")]
    Mismatch(String),
}

/// One chain of constrained draws with per-iteration sampler statistics.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    /// `draws[iter]` in the order of [`PosteriorDraws::names`].
    pub draws: Vec<Vec<f64>>,
    pub stats: Vec<IterStats>,
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    pub divergences: usize,
    /// Set when more than [`DIVERGENCE_WARNING_FRACTION`] of kept transitions diverged.
    pub high_divergence: bool,
}

impl PosteriorDraws {
    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// `chains x iterations` values of one parameter.
    pub fn param(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.draws.iter().map(|d| d[j]).collect()).collect()
    }

    /// Every draw of every chain, chain-major.
    pub fn iter_draws(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }
}

/// Samples the posterior and maps the draws to the constrained scale.
pub fn sample(model: &HierarchicalModel<f64>, cfg: &SamplerConfig) -> Result<PosteriorDraws, BayesError> {
    let chains = run_chains(model, cfg)?;
    let mut divergences = 0;
    let chains: Vec<ChainDraws> = chains
        .into_iter()
        .map(|c| {
            divergences += c.stats.iter().filter(|s| s.divergent).count();
            ChainDraws {
                draws: c.draws.iter().map(|x| model.constrain(x).to_vec()).collect(),
                stats: c.stats,
                step_size: c.step_size,
            }
        })
        .collect();
    let kept: usize = chains.iter().map(|c| c.draws.len()).sum();
    Ok(PosteriorDraws {
        names: model.param_names(),
        high_divergence: divergences as f64 > DIVERGENCE_WARNING_FRACTION * kept as f64,
        divergences,
        chains,
    })
}

/// Slopes drawn from the model at fixed parameters, every cell with standard error `sigma`.
pub fn simulate_grid(model: &HierarchicalModel<f64>, params: &ModelParams<f64>, seed: u64) -> SlopeGrid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.sigma).expect("positive sigma");
    let (nt, ns) = (model.horizons, model.sizes);
    let mut grid = SlopeGrid::empty(model.domains.clone(), nt, ns);
    for d in 0..model.d() {
        for t in 0..nt {
            for s in 0..ns {
                let theta = model.cell_mean(params, d, t, s) + noise.sample(&mut rng);
                grid.cells[(d * nt + t) * ns + s] = Some(CellSlope { theta, se: params.sigma, n: 0 });
            }
        }
    }
    grid
}
