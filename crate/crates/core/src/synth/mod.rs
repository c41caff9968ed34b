//! Synthetic markets and trades with a known calibration structure.
//!
//! Prices are inverted from a latent truth: a market with true probability
//! `q` quotes `logit p = (logit q - a*) / theta`, so the recalibration fit of
//! outcomes on prices recovers `(a*, theta)` in expectation.

mod oracle;

pub use oracle::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::ComponentSet;
use crate::ingest::{
    BinningConfig, DomainRule, DomainRuleSet, FilterConfig, MarketRecord, MatchKind, Outcome, Side, TradeRecord,
};
use crate::scalar::{logit, sigmoid};

pub const DEFAULT_DOMAINS: [&str; 6] = ["Politics", "Sports", "Crypto", "Finance", "Weather", "Entertainment"];

/// Close time shared by every synthetic market.
pub const CLOSE_TIME_MS: i64 = 1_700_000_000_000;

/// Generated prices are clamped to this range before rounding to cents.
pub const PRICE_CLAMP: (f64, f64) = (0.05, 0.95);

/// Above this clamped fraction the target distribution is reported as too extreme.
pub const CLAMP_WARNING_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("target slope {theta} in cell {cell} is not positive")]
    NonPositiveSlope { cell: String, theta: f64 },
    #[error("grid-search optimum ({a}, {b}) lies on the search boundary")]
    OracleBoundary { a: f64, b: f64 },
    #[error("grid-search oracle needs at least one observation")]
    OracleEmpty,
}

/// Trades per market: a constant, or uniform on `min..=max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TradesPerMarket {
    Fixed(usize),
    Range { min: usize, max: usize },
}

impl TradesPerMarket {
    fn min(self) -> usize {
        match self {
            TradesPerMarket::Fixed(n) => n,
            TradesPerMarket::Range { min, .. } => min,
        }
    }

    fn draw(self, rng: &mut impl Rng) -> usize {
        match self {
            TradesPerMarket::Fixed(n) => n,
            TradesPerMarket::Range { min, max } => rng.random_range(min..=max),
        }
    }
}

/// How a trade's contract count is drawn within its size bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountLaw {
    /// Log-uniform between the bin's edges.
    #[default]
    LogUniform,
    /// Always the bin's lower edge.
    LowerEdge,
}

/// Slope structure in plain arrays. Empty arrays mean zero, except `mu`,
/// where empty means 1 at every horizon. Arrays must already satisfy the
/// sum-to-zero constraints of [`ComponentSet`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureSpec {
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Index `d * T + tau`.
    pub beta: Vec<f64>,
    /// Index `d * S + s`.
    pub gamma: Vec<f64>,
}

/// Restricts generation to one cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSelector {
    pub domain: String,
    pub horizon: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub domains: Vec<String>,
    pub structure: StructureSpec,
    /// Per-cell intercepts `a*` in grid layout; empty means `intercept` everywhere.
    pub intercepts: Vec<f64>,
    pub intercept: f64,
    pub markets_per_cell: usize,
    pub trades_per_market: TradesPerMarket,
    /// Logit-normal law of the latent probability `q`.
    pub latent_mean: f64,
    pub latent_sd: f64,
    /// Per-trade noise on the logit price.
    pub price_jitter_sd: f64,
    /// Per-cell noise added to the target slope, drawn once per cell.
    pub slope_noise_sd: f64,
    pub contract_count: CountLaw,
    /// Upper edge of the last size bin.
    pub max_count: u64,
    /// Empty means every cell of the grid.
    pub cells: Vec<CellSelector>,
    pub bins: BinningConfig,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            domains: DEFAULT_DOMAINS.iter().map(|s| s.to_string()).collect(),
            structure: StructureSpec::default(),
            intercepts: Vec::new(),
            intercept: 0.0,
            markets_per_cell: 50,
            trades_per_market: TradesPerMarket::Fixed(20),
            latent_mean: 0.0,
            latent_sd: 1.2,
            price_jitter_sd: 0.05,
            slope_noise_sd: 0.0,
            contract_count: CountLaw::LogUniform,
            max_count: 1000,
            cells: Vec::new(),
            bins: BinningConfig::default(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// A spec whose target slopes are `c`'s fitted values (residuals ignored).
    pub fn from_components(c: &ComponentSet<f64>) -> Self {
        SynthSpec {
            domains: c.domains.clone(),
            structure: StructureSpec {
                mu: c.mu.clone(),
                alpha: c.alpha.clone(),
                beta: c.beta.clone(),
                gamma: c.gamma.clone(),
            },
            ..SynthSpec::default()
        }
    }

    pub fn horizons(&self) -> usize {
        self.bins.horizon_bins()
    }

    pub fn sizes(&self) -> usize {
        self.bins.size_bins()
    }

    fn cell_count(&self) -> usize {
        self.domains.len() * self.horizons() * self.sizes()
    }

    /// Target structure as a [`ComponentSet`], checking lengths and constraints.
    pub fn components(&self) -> Result<ComponentSet<f64>, SynthError> {
        let (nd, nt, ns) = (self.domains.len(), self.horizons(), self.sizes());
        let st = &self.structure;
        let take = |v: &[f64], n: usize, fill: f64, what: &str| -> Result<Vec<f64>, SynthError> {
            match v.len() {
                0 => Ok(vec![fill; n]),
                k if k == n => Ok(v.to_vec()),
                k => Err(SynthError::Spec(format!("{what} has {k} entries, expected {n}"))),
            }
        };
        let mu = take(&st.mu, nt, 1.0, "mu")?;
        let alpha = take(&st.alpha, nd, 0.0, "alpha")?;
        let beta = take(&st.beta, nd * nt, 0.0, "beta")?;
        let gamma = take(&st.gamma, nd * ns, 0.0, "gamma")?;
        let c = ComponentSet::centred(self.domains.clone(), mu.clone(), alpha.clone(), beta.clone(), gamma.clone());
        let moved = c.alpha.iter().zip(&alpha)
            .chain(c.beta.iter().zip(&beta))
            .chain(c.gamma.iter().zip(&gamma))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if moved > 1e-9 {
            return Err(SynthError::Spec(format!("structure violates the sum-to-zero constraints by {moved:.3e}")));
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.bins.validate().map_err(|e| SynthError::Spec(e.to_string()))?;
        if self.domains.is_empty() {
            return Err(SynthError::Spec("no domains".into()));
        }
        let mut names: Vec<&str> = self.domains.iter().map(String::as_str).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.domains.len() {
            return Err(SynthError::Spec("duplicate domain names".into()));
        }
        if self.markets_per_cell == 0 || self.trades_per_market.min() == 0 {
            return Err(SynthError::Spec("markets_per_cell and trades_per_market must be positive".into()));
        }
        if let TradesPerMarket::Range { min, max } = self.trades_per_market {
            if min > max {
                return Err(SynthError::Spec(format!("trades_per_market range {min}..={max} is empty")));
            }
        }
        let finite = [self.intercept, self.latent_mean, self.latent_sd, self.price_jitter_sd, self.slope_noise_sd];
        if finite.iter().any(|x| !x.is_finite()) || self.latent_sd <= 0.0 || self.price_jitter_sd < 0.0 || self.slope_noise_sd < 0.0 {
            return Err(SynthError::Spec("latent_sd must be positive; jitter and slope noise non-negative; all finite".into()));
        }
        if !self.intercepts.is_empty() && self.intercepts.len() != self.cell_count() {
            return Err(SynthError::Spec(format!("intercepts has {} entries, expected {}", self.intercepts.len(), self.cell_count())));
        }
        if self.max_count < *self.bins.size_lower.last().expect("validated bins") {
            return Err(SynthError::Spec("max_count is below the last size bin's lower edge".into()));
        }
        for c in &self.cells {
            if !self.domains.contains(&c.domain) || c.horizon >= self.horizons() || c.size >= self.sizes() {
                return Err(SynthError::Spec(format!("cell ({}, {}, {}) is outside the grid", c.domain, c.horizon, c.size)));
            }
        }
        self.components()?;
        Ok(())
    }

    /// Checks that generated markets and cells survive the ingest filters.
    pub fn check_filters(&self, filt: &FilterConfig) -> Result<(), SynthError> {
        let per_market = self.trades_per_market.min();
        if per_market < filt.min_trades_per_market {
            return Err(SynthError::Spec(format!(
                "trades_per_market {per_market} is below min_trades_per_market {}",
                filt.min_trades_per_market
            )));
        }
        if self.markets_per_cell * per_market < filt.min_trades_per_cell {
            return Err(SynthError::Spec(format!(
                "markets_per_cell * trades_per_market = {} is below min_trades_per_cell {}",
                self.markets_per_cell * per_market,
                filt.min_trades_per_cell
            )));
        }
        Ok(())
    }

    fn selected(&self) -> Vec<(usize, usize, usize)> {
        let (nt, ns) = (self.horizons(), self.sizes());
        if self.cells.is_empty() {
            let nd = self.domains.len();
            return (0..nd).flat_map(|d| (0..nt).flat_map(move |t| (0..ns).map(move |s| (d, t, s)))).collect();
        }
        let mut v: Vec<_> = self
            .cells
            .iter()
            .map(|c| (self.domains.iter().position(|x| *x == c.domain).expect("validated"), c.horizon, c.size))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Ticker prefix of domain `d`; the index keeps prefixes unique.
    pub fn ticker_prefix(&self, d: usize) -> String {
        let name: String = self.domains[d].chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        format!("SYN{d:02}{}-", name.to_ascii_uppercase())
    }

    /// Rules mapping each ticker prefix to its domain.
    pub fn rules(&self) -> DomainRuleSet {
        let rules = (0..self.domains.len())
            .map(|d| DomainRule::new(MatchKind::TickerPrefix, &self.ticker_prefix(d), &self.domains[d]).expect("prefix rules are valid"))
            .collect();
        DomainRuleSet::new(rules)
    }

    /// Milliseconds before close at the middle of horizon bin `t`; the unbounded
    /// last bin uses 1.5 times its lower edge.
    pub fn horizon_midpoint_ms(&self, t: usize) -> i64 {
        let lo = &self.bins.horizon_lower_ms;
        match lo.get(t + 1) {
            Some(&hi) => (lo[t] + hi) / 2,
            None => lo[t] + lo[t] / 2,
        }
    }

    fn count_range(&self, s: usize) -> (u64, u64) {
        let lo = &self.bins.size_lower;
        (lo[s], lo.get(s + 1).map_or(self.max_count, |&h| h - 1))
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub trades: Vec<TradeRecord>,
    pub markets: Vec<MarketRecord>,
    pub rules: DomainRuleSet,
    /// Realized target slope of every grid cell, including slope noise.
    pub theta: Vec<f64>,
    /// Target structure before slope noise.
    pub components: ComponentSet<f64>,
    pub clamped_prices: u64,
    pub warnings: Vec<String>,
}

struct CellOutput {
    trades: Vec<TradeRecord>,
    markets: Vec<MarketRecord>,
    clamped: u64,
}

/// Draws markets and trades for every selected cell.
///
/// Each cell uses its own RNG stream, keyed by its grid index, so the output
/// does not depend on scheduling.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let components = spec.components()?;
    let (nt, ns) = (spec.horizons(), spec.sizes());
    let index = |d: usize, t: usize, s: usize| (d * nt + t) * ns + s;

    let mut theta = vec![0.0; spec.cell_count()];
    for d in 0..spec.domains.len() {
        for t in 0..nt {
            for s in 0..ns {
                let i = index(d, t, s);
                let mut th = components.fitted(d, t, s);
                if spec.slope_noise_sd > 0.0 {
                    let mut rng = cell_rng(spec.seed, i, 1);
                    th += spec.slope_noise_sd * standard_normal(&mut rng);
                }
                theta[i] = th;
            }
        }
    }
    let cells = spec.selected();
    for &(d, t, s) in &cells {
        let th = theta[index(d, t, s)];
        if !(th > 0.0) {
            return Err(SynthError::NonPositiveSlope { cell: format!("({}, h{t}, s{s})", spec.domains[d]), theta: th });
        }
    }

    let outputs: Vec<CellOutput> = cells
        .par_iter()
        .map(|&(d, t, s)| {
            let i = index(d, t, s);
            let a = spec.intercepts.get(i).copied().unwrap_or(spec.intercept);
            generate_cell(spec, d, t, s, theta[i], a, cell_rng(spec.seed, i, 0))
        })
        .collect();

    let mut out = SynthOutput {
        trades: Vec::new(),
        markets: Vec::new(),
        rules: spec.rules(),
        theta,
        components,
        clamped_prices: 0,
        warnings: Vec::new(),
    };
    for c in outputs {
        out.trades.extend(c.trades);
        out.markets.extend(c.markets);
        out.clamped_prices += c.clamped;
    }
    let frac = out.clamped_prices as f64 / out.trades.len().max(1) as f64;
    if frac > CLAMP_WARNING_FRACTION {
        out.warnings.push(format!(
            "{:.1}% of prices were clamped to [{}, {}]; the target distribution is too extreme",
            100.0 * frac,
            PRICE_CLAMP.0,
            PRICE_CLAMP.1
        ));
    }
    Ok(out)
}

/// Stream 0 drives trades, stream 1 the per-cell slope noise.
fn cell_rng(seed: u64, cell: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 1) | purpose);
    rng
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

fn generate_cell(spec: &SynthSpec, d: usize, t: usize, s: usize, theta: f64, a: f64, mut rng: ChaCha8Rng) -> CellOutput {
    let prefix = spec.ticker_prefix(d);
    let timestamp = CLOSE_TIME_MS - spec.horizon_midpoint_ms(t);
    let (lo, hi) = spec.count_range(s);
    let latent = Normal::new(spec.latent_mean, spec.latent_sd).expect("validated sd");
    let mut out = CellOutput { trades: Vec::new(), markets: Vec::with_capacity(spec.markets_per_cell), clamped: 0 };
    for m in 0..spec.markets_per_cell {
        let event = format!("{prefix}H{t}S{s}");
        let market_id = format!("{event}-M{m:05}");
        let q = sigmoid(latent.sample(&mut rng));
        let base = (logit(q) - a) / theta;
        let yes = rng.random::<f64>() < q;
        out.markets.push(MarketRecord {
            market_id: market_id.clone(),
            event_ticker: event,
            title: format!("Synthetic market {m} of {} h{t} s{s}", spec.domains[d]),
            close_time_ms: CLOSE_TIME_MS,
            outcome: if yes { Outcome::Yes } else { Outcome::No },
        });
        let n = spec.trades_per_market.draw(&mut rng);
        for _ in 0..n {
            let jitter = if spec.price_jitter_sd > 0.0 { spec.price_jitter_sd * standard_normal(&mut rng) } else { 0.0 };
            let p = sigmoid(base + jitter);
            let clamped = p.clamp(PRICE_CLAMP.0, PRICE_CLAMP.1);
            if clamped != p {
                out.clamped += 1;
            }
            let count = match spec.contract_count {
                CountLaw::LowerEdge => lo,
                CountLaw::LogUniform if lo == hi => lo,
                CountLaw::LogUniform => {
                    let u = rng.random_range((lo as f64).ln()..((hi + 1) as f64).ln());
                    (u.exp().floor() as u64).clamp(lo, hi)
                }
            };
            out.trades.push(TradeRecord {
                market_id: market_id.clone(),
                price_cents: (clamped * 100.0).round() as u8,
                count,
                side: if rng.random::<bool>() { Side::Yes } else { Side::No },
                timestamp_ms: timestamp,
            });
        }
    }
    out
}
