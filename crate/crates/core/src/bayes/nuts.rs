//! Dynamic-trajectory Hamiltonian sampler with multinomial state selection,
//! generalized U-turn termination, dual-averaging step size and windowed
//! diagonal mass-matrix adaptation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BayesError;

/// Energy error beyond which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

/// Log density over `R^n` with gradient.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad`; a non-finite value marks an invalid point.
    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for super::HierarchicalModel<f64> {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        if x.iter().any(|v| !v.is_finite()) {
            return f64::NAN;
        }
        self.eval(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub keep: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seed: u64,
    /// Initial coordinates are uniform on `[-init_radius, init_radius]`.
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { chains: 4, warmup: 2000, keep: 2000, target_accept: 0.8, max_depth: 10, seed: 0, init_radius: 0.5 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), BayesError> {
        if self.chains == 0 || self.keep == 0 {
            return Err(BayesError::Config("chains and keep must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(BayesError::Config(format!("target_accept must lie in (0, 1), got {}", self.target_accept)));
        }
        if self.max_depth == 0 || self.max_depth > 20 {
            return Err(BayesError::Config("max_depth must lie in 1..=20".into()));
        }
        if !(self.init_radius >= 0.0) {
            return Err(BayesError::Config("init_radius must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterStats {
    pub accept_stat: f64,
    pub n_leapfrog: usize,
    pub tree_depth: usize,
    pub divergent: bool,
    /// Hamiltonian at the selected state.
    pub energy: f64,
}

/// One chain's post-warmup output on the unconstrained scale.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub stats: Vec<IterStats>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    logp: f64,
}

struct Sampler<'a, D: LogDensity> {
    target: &'a D,
    inv_metric: Vec<f64>,
    eps: f64,
    max_depth: usize,
    rng: ChaCha8Rng,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// No U-turn across the span with momentum sum `rho`.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Trajectory edge state during a tree build.
struct Edge {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
}

impl<'a, D: LogDensity> Sampler<'a, D> {
    fn hamiltonian(&self, z: &Point) -> f64 {
        let k: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| m * p * p).sum::<f64>() / 2.0;
        let h = -z.logp + k;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| m * p).collect()
    }

    fn sample_momentum(&mut self, z: &mut Point) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = self.rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.g) {
            *p += eps / 2.0 * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density(&z.q, &mut z.g);
        if !z.logp.is_finite() {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.g) {
            *p += eps / 2.0 * g;
        }
    }

    /// Builds a subtree of `2^depth` steps from `z`, leaving `z` at its far end.
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        edge: &mut Edge,
        rho: &mut [f64],
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.eps);
            self.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            self.sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            edge.p_sharp_beg = self.p_sharp(&z.p);
            edge.p_sharp_end = edge.p_sharp_beg.clone();
            add_into(rho, &z.p);
            edge.p_beg = z.p.clone();
            edge.p_end = z.p.clone();
            return !self.divergent;
        }
        let n = rho.len();
        let mut init = Edge { p_sharp_beg: Vec::new(), p_sharp_end: Vec::new(), p_beg: Vec::new(), p_end: Vec::new() };
        let mut rho_init = vec![0.0; n];
        let mut lsw_init = f64::NEG_INFINITY;
        if !self.build_tree(depth - 1, z, z_propose, &mut init, &mut rho_init, h0, sign, &mut lsw_init) {
            return false;
        }
        let mut z_final = z.clone();
        let mut fin = Edge { p_sharp_beg: Vec::new(), p_sharp_end: Vec::new(), p_beg: Vec::new(), p_end: Vec::new() };
        let mut rho_final = vec![0.0; n];
        let mut lsw_final = f64::NEG_INFINITY;
        if !self.build_tree(depth - 1, z, &mut z_final, &mut fin, &mut rho_final, h0, sign, &mut lsw_final) {
            return false;
        }
        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_final;
        }
        let rho_subtree = sum(&rho_init, &rho_final);
        add_into(rho, &rho_subtree);
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho_subtree);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &sum(&rho_init, &fin.p_beg));
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &sum(&rho_final, &init.p_end));
        edge.p_sharp_beg = init.p_sharp_beg;
        edge.p_beg = init.p_beg;
        edge.p_sharp_end = fin.p_sharp_end;
        edge.p_end = fin.p_end;
        persist
    }

    fn transition(&mut self, start: &Point) -> (Point, IterStats) {
        let mut z0 = start.clone();
        self.sample_momentum(&mut z0);
        let h0 = self.hamiltonian(&z0);
        self.n_leapfrog = 0;
        self.sum_metro = 0.0;
        self.divergent = false;

        let mut z_fwd = z0.clone();
        let mut z_bwd = z0.clone();
        let mut z_sample = z0.clone();
        let mut z_propose = z0.clone();
        let ps = self.p_sharp(&z0.p);
        // [bwd_bwd .. bwd_fwd][fwd_bwd .. fwd_fwd]
        let (mut p_fwd_fwd, mut p_fwd_bwd, mut p_bwd_fwd, mut p_bwd_bwd) = (z0.p.clone(), z0.p.clone(), z0.p.clone(), z0.p.clone());
        let (mut ps_fwd_fwd, mut ps_fwd_bwd, mut ps_bwd_fwd, mut ps_bwd_bwd) = (ps.clone(), ps.clone(), ps.clone(), ps);
        let mut rho = z0.p.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;
        let n = rho.len();

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; n];
            let mut rho_bwd = vec![0.0; n];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid;
            if self.rng.random::<f64>() > 0.5 {
                rho_bwd.clone_from(&rho);
                p_bwd_fwd.clone_from(&p_fwd_fwd);
                ps_bwd_fwd.clone_from(&ps_fwd_fwd);
                let mut z = z_fwd.clone();
                let mut edge = Edge { p_sharp_beg: Vec::new(), p_sharp_end: Vec::new(), p_beg: Vec::new(), p_end: Vec::new() };
                valid = self.build_tree(depth, &mut z, &mut z_propose, &mut edge, &mut rho_fwd, h0, 1.0, &mut lsw_subtree);
                z_fwd = z;
                if valid {
                    ps_fwd_bwd = edge.p_sharp_beg;
                    ps_fwd_fwd = edge.p_sharp_end;
                    p_fwd_bwd = edge.p_beg;
                    p_fwd_fwd = edge.p_end;
                }
            } else {
                rho_fwd.clone_from(&rho);
                p_fwd_bwd.clone_from(&p_bwd_bwd);
                ps_fwd_bwd.clone_from(&ps_bwd_bwd);
                let mut z = z_bwd.clone();
                let mut edge = Edge { p_sharp_beg: Vec::new(), p_sharp_end: Vec::new(), p_beg: Vec::new(), p_end: Vec::new() };
                valid = self.build_tree(depth, &mut z, &mut z_propose, &mut edge, &mut rho_bwd, h0, -1.0, &mut lsw_subtree);
                z_bwd = z;
                if valid {
                    ps_bwd_fwd = edge.p_sharp_beg;
                    ps_bwd_bwd = edge.p_sharp_end;
                    p_bwd_fwd = edge.p_beg;
                    p_bwd_bwd = edge.p_end;
                }
            }
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight || self.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
            rho = sum(&rho_bwd, &rho_fwd);
            let mut persist = no_u_turn(&ps_bwd_bwd, &ps_fwd_fwd, &rho);
            persist &= no_u_turn(&ps_bwd_bwd, &ps_fwd_bwd, &sum(&rho_bwd, &p_fwd_bwd));
            persist &= no_u_turn(&ps_bwd_fwd, &ps_fwd_fwd, &sum(&rho_fwd, &p_bwd_fwd));
            if !persist {
                break;
            }
        }
        let energy = self.hamiltonian(&z_sample);
        let stats = IterStats {
            accept_stat: if self.n_leapfrog > 0 { self.sum_metro / self.n_leapfrog as f64 } else { 0.0 },
            n_leapfrog: self.n_leapfrog,
            tree_depth: depth,
            divergent: self.divergent,
            energy,
        };
        (z_sample, stats)
    }

    /// Doubles or halves `eps` until one leapfrog step crosses acceptance 0.8.
    fn init_step_size(&mut self, z: &Point) -> Result<(), BayesError> {
        let log_target = 0.8f64.ln();
        let mut direction = 0.0;
        loop {
            let mut trial = z.clone();
            self.sample_momentum(&mut trial);
            let h0 = self.hamiltonian(&trial);
            self.leapfrog(&mut trial, self.eps);
            let delta_h = h0 - self.hamiltonian(&trial);
            let up = delta_h > log_target;
            if direction == 0.0 {
                direction = if up { 1.0 } else { -1.0 };
            } else if (direction > 0.0) != up {
                return Ok(());
            }
            self.eps = if direction > 0.0 { 2.0 * self.eps } else { self.eps / 2.0 };
            if self.eps > 1e7 {
                return Err(BayesError::Sampler("step size diverged while initializing; the posterior may be improper".into()));
            }
            if self.eps < 1e-300 {
                return Err(BayesError::Sampler("step size underflowed while initializing; non-finite gradient at the start".into()));
            }
        }
    }
}

/// Dual averaging of the log step size towards a target acceptance rate.
#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(delta: f64, eps: f64) -> Self {
        DualAveraging { mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, delta }
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: a step-size-only buffer, doubling metric windows, and a
/// final step-size-only buffer.
#[derive(Debug, Clone)]
pub struct WarmupSchedule {
    pub init_buffer: usize,
    pub term_buffer: usize,
    pub base_window: usize,
    /// Iteration index (0-based) at which each metric window ends.
    pub window_ends: Vec<usize>,
}

impl WarmupSchedule {
    pub fn new(warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if warmup < 20 {
            return WarmupSchedule { init_buffer: warmup, term_buffer: 0, base_window: 0, window_ends: Vec::new() };
        }
        if init + term + base > warmup {
            init = warmup * 15 / 100;
            term = warmup / 10;
            base = warmup - init - term;
        }
        let last = warmup - term - 1;
        let mut ends = Vec::new();
        let mut size = base;
        let mut end = init + size - 1;
        loop {
            if end >= last {
                ends.push(last);
                break;
            }
            ends.push(end);
            size *= 2;
            let next = end + size;
            // a window that leaves too little room for its successor absorbs it
            if next + 2 * size >= last {
                ends.push(last);
                break;
            }
            end = next;
        }
        WarmupSchedule { init_buffer: init, term_buffer: term, base_window: base, window_ends: ends }
    }
}

/// Welford accumulator of per-coordinate variance.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n as f64;
            *s += d * (v - *m);
        }
    }

    /// Sample variance shrunk towards `1e-3`: `(n/(n+5)) var + 1e-3 * 5/(n+5)`.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|s| (n / (n + 5.0)) * s / (n - 1.0) + 1e-3 * 5.0 / (n + 5.0)).collect()
    }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs one chain: initialization, adapted warmup, then `keep` draws.
pub fn run_chain<D: LogDensity>(target: &D, cfg: &SamplerConfig, chain: usize) -> Result<ChainOutput, BayesError> {
    let dim = target.dim();
    let mut rng = chain_rng(cfg.seed, chain);
    let mut start = None;
    for _ in 0..100 {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-cfg.init_radius..=cfg.init_radius)).collect();
        let mut g = vec![0.0; dim];
        let logp = target.log_density(&q, &mut g);
        if logp.is_finite() && g.iter().all(|v| v.is_finite()) {
            start = Some(Point { q, p: vec![0.0; dim], g, logp });
            break;
        }
    }
    let mut z = start.ok_or_else(|| BayesError::Sampler(format!("chain {chain}: no finite starting point in 100 attempts")))?;
    let mut s = Sampler {
        target,
        inv_metric: vec![1.0; dim],
        eps: 1.0,
        max_depth: cfg.max_depth,
        rng,
        n_leapfrog: 0,
        sum_metro: 0.0,
        divergent: false,
    };
    s.init_step_size(&z)?;
    let schedule = WarmupSchedule::new(cfg.warmup);
    let mut da = DualAveraging::new(cfg.target_accept, s.eps);
    let mut window = Welford::new(dim);
    let mut next_end = schedule.window_ends.iter().copied().peekable();
    for it in 0..cfg.warmup {
        let (nz, st) = s.transition(&z);
        z = nz;
        s.eps = da.learn(st.accept_stat);
        let in_window = it >= schedule.init_buffer && it < cfg.warmup - schedule.term_buffer;
        if in_window {
            window.add(&z.q);
        }
        if next_end.peek() == Some(&it) {
            next_end.next();
            s.inv_metric = window.regularized();
            window = Welford::new(dim);
            s.init_step_size(&z)?;
            da = DualAveraging::new(cfg.target_accept, s.eps);
        }
    }
    if cfg.warmup > 0 {
        s.eps = da.final_step();
    }
    let mut draws = Vec::with_capacity(cfg.keep);
    let mut stats = Vec::with_capacity(cfg.keep);
    for _ in 0..cfg.keep {
        let (nz, st) = s.transition(&z);
        z = nz;
        if !st.energy.is_finite() {
            return Err(BayesError::Sampler(format!("chain {chain}: non-finite energy at a selected state")));
        }
        draws.push(z.q.clone());
        stats.push(st);
    }
    Ok(ChainOutput { draws, stats, step_size: s.eps, inv_metric: s.inv_metric })
}

/// Runs all chains in parallel; each chain's stream depends only on `(seed, chain)`.
pub fn run_chains<D: LogDensity>(target: &D, cfg: &SamplerConfig) -> Result<Vec<ChainOutput>, BayesError> {
    cfg.validate()?;
    (0..cfg.chains).into_par_iter().map(|c| run_chain(target, cfg, c)).collect()
}

/// Largest `|H - H0|` along `steps` leapfrog steps of size `eps` under a unit metric.
pub fn energy_drift<D: LogDensity>(target: &D, q: &[f64], p: &[f64], eps: f64, steps: usize) -> f64 {
    let dim = target.dim();
    let mut g = vec![0.0; dim];
    let logp = target.log_density(q, &mut g);
    let s = Sampler {
        target,
        inv_metric: vec![1.0; dim],
        eps,
        max_depth: 1,
        rng: ChaCha8Rng::seed_from_u64(0),
        n_leapfrog: 0,
        sum_metro: 0.0,
        divergent: false,
    };
    let mut z = Point { q: q.to_vec(), p: p.to_vec(), g, logp };
    let h0 = s.hamiltonian(&z);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        s.leapfrog(&mut z, eps);
        worst = worst.max((s.hamiltonian(&z) - h0).abs());
    }
    worst
}
