use marketcal::bayes::*;
use marketcal::decomp::SlopeGrid;
use marketcal::special::{normal_cdf, normal_quantile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const D: usize = 6;
const T: usize = 9;
const S: usize = 4;

fn domains() -> Vec<String> {
    ["Politics", "Sports", "Crypto", "Finance", "Weather", "Entertainment"].iter().map(|s| s.to_string()).collect()
}

fn prior_model(spec: BayesModelSpec) -> HierarchicalModel<f64> {
    HierarchicalModel::with_observed(spec, domains(), T, S, vec![None; D * T * S]).unwrap()
}

/// Raw coordinates and mu from their priors, scales fixed.
fn draw_truth(model: &HierarchicalModel<f64>, scales: [f64; 4], rng: &mut ChaCha8Rng) -> ModelParams<f64> {
    let l = model.layout;
    let mut x: Vec<f64> = (0..l.dim).map(|_| StandardNormal.sample(rng)).collect();
    for v in &mut x[..T] {
        *v = 1.0 + 0.5 * *v;
    }
    if model.spec.fixed_scales.is_none() {
        for (j, s) in scales.iter().enumerate() {
            x[l.scales + j] = s.ln();
        }
        model.constrain(&x)
    } else {
        let mut p = model.constrain(&x);
        let [sa, sb, sd, s] = model.spec.fixed_scales.unwrap();
        (p.sigma_alpha, p.sigma_beta, p.sigma_delta, p.sigma) = (sa, sb, sd, s);
        p
    }
}

fn synthetic(scales: [f64; 4], seed: u64) -> (HierarchicalModel<f64>, ModelParams<f64>, SlopeGrid<f64>) {
    let prior = prior_model(BayesModelSpec::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = draw_truth(&prior, scales, &mut rng);
    let grid = simulate_grid(&prior, &truth, seed.wrapping_add(1_000_003));
    (HierarchicalModel::new(BayesModelSpec::default(), &grid).unwrap(), truth, grid)
}

fn cfg(warmup: usize, keep: usize, seed: u64) -> SamplerConfig {
    SamplerConfig { warmup, keep, seed, ..SamplerConfig::default() }
}

fn max_rel_gradient_error(model: &HierarchicalModel<f64>, x: &[f64]) -> f64 {
    let (_, g) = model.log_posterior_and_gradient(x).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut up, mut dn) = (x.to_vec(), x.to_vec());
        up[i] += h;
        dn[i] -= h;
        let fd = (model.log_posterior_and_gradient(&up).unwrap().0 - model.log_posterior_and_gradient(&dn).unwrap().0) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / fd.abs().max(1.0));
    }
    worst
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let (_, _, grid) = synthetic([0.1, 0.1, 0.04, 0.05], 1);
    let variants = [
        BayesModelSpec::default(),
        BayesModelSpec { beta_doubly_centred: false, ..Default::default() },
        BayesModelSpec { fixed_scales: Some([0.2, 0.1, 0.05, 0.1]), ..Default::default() },
        BayesModelSpec { hyperprior_scale: 0.3, mu_prior_mean: 0.8, mu_prior_sd: 0.2, ..Default::default() },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for spec in variants {
        let model = HierarchicalModel::new(spec, &grid).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
            let err = max_rel_gradient_error(&model, &x);
            assert!(err < 1e-5, "relative gradient error {err}");
        }
    }
}

#[test]
fn non_finite_coordinates_are_rejected() {
    let model = prior_model(BayesModelSpec::default());
    let mut x = vec![0.0; model.dim()];
    x[60] = f64::NAN;
    assert!(matches!(model.log_posterior_and_gradient(&x), Err(BayesError::NonFiniteInput)));
    assert!(matches!(model.log_posterior_and_gradient(&x[..10]), Err(BayesError::Spec(_))));
}

#[test]
fn incomplete_grid_is_rejected() {
    let (_, _, mut grid) = synthetic([0.1, 0.1, 0.04, 0.05], 3);
    grid.cells[5] = None;
    assert!(matches!(HierarchicalModel::new(BayesModelSpec::default(), &grid), Err(BayesError::IncompleteGrid(ref m)) if m.len() == 1));
}

#[test]
fn constrain_and_unconstrain_are_inverse() {
    for doubly in [true, false] {
        let model = prior_model(BayesModelSpec { beta_doubly_centred: doubly, ..Default::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let back = model.unconstrain(&model.constrain(&x));
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
        let p = model.constrain(&x);
        assert_eq!(model.params_from_constrained(&p.to_vec()).unwrap(), p);
    }
}

/// Monte Carlo standard errors of the mean and sd of one parameter.
fn mc_moments(draws: &PosteriorDraws, name: &str) -> (f64, f64, f64, f64) {
    let j = draws.param_index(name).unwrap();
    let chains = draws.param(j);
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let sd = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let ess = mean_ess(&chains).unwrap();
    let sq: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|x| (x - mean).powi(2)).collect()).collect();
    let ess_sq = mean_ess(&sq).unwrap();
    // delta method: se(sd) = se(var) / (2 sd)
    let var_sq = sq.iter().flatten().map(|v| (v - sd * sd).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, sd, sd / ess.sqrt(), (var_sq / ess_sq).sqrt() / (2.0 * sd))
}

#[test]
fn single_cell_posterior_is_conjugate_normal() {
    let scales = [0.1, 0.05, 0.03, 0.05];
    let spec = BayesModelSpec { fixed_scales: Some(scales), ..Default::default() };
    let mut observed = vec![None; D * T * S];
    let y = 1.3;
    observed[0] = Some(y);
    let model = HierarchicalModel::with_observed(spec.clone(), domains(), T, S, observed).unwrap();
    let draws = sample(&model, &cfg(1000, 2000, 11)).unwrap();

    // theta | mu(0) ~ N(mu(0), v) once alpha(0), beta(0,0), delta(0) are integrated out
    let [sa, sb, sd, s] = scales;
    let (df, tf) = (D as f64, T as f64);
    let s0 = spec.centred_log_sizes[0];
    let v = s * s + sa * sa * (1.0 - 1.0 / df) + sb * sb * (1.0 - 1.0 / df) * (1.0 - 1.0 / tf) + sd * sd * s0 * s0;
    let prec = 4.0 + 1.0 / v;
    let (post_mean, post_sd) = ((4.0 * 1.0 + y / v) / prec, prec.powf(-0.5));

    let (mean, sd_hat, se_mean, se_sd) = mc_moments(&draws, "mu[0]");
    assert!((mean - post_mean).abs() < 3.0 * se_mean, "mean {mean} vs {post_mean} (se {se_mean})");
    assert!((sd_hat - post_sd).abs() < 3.0 * se_sd, "sd {sd_hat} vs {post_sd} (se {se_sd})");
    // an unobserved horizon keeps its prior
    let (mean, sd_hat, se_mean, se_sd) = mc_moments(&draws, "mu[4]");
    assert!((mean - 1.0).abs() < 3.0 * se_mean, "prior mean {mean} (se {se_mean})");
    assert!((sd_hat - 0.5).abs() < 3.0 * se_sd, "prior sd {sd_hat} (se {se_sd})");
}

#[test]
fn without_data_mu_recovers_its_prior_quantiles() {
    let model = prior_model(BayesModelSpec::default());
    let draws = sample(&model, &cfg(1000, 2000, 12)).unwrap();
    for t in 0..T {
        let j = draws.param_index(&format!("mu[{t}]")).unwrap();
        let chains = draws.param(j);
        let all: Vec<f64> = chains.iter().flatten().copied().collect();
        for q in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let x_q = 1.0 + 0.5 * normal_quantile(q);
            let f_hat = all.iter().filter(|&&x| x <= x_q).count() as f64 / all.len() as f64;
            // the standard error of an empirical CDF value uses the ESS of its indicator
            let ind: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|&x| f64::from(u8::from(x <= x_q))).collect()).collect();
            let se = (q * (1.0 - q) / mean_ess(&ind).unwrap()).sqrt();
            assert!((f_hat - q).abs() < 3.0 * se, "mu[{t}] at q={q}: empirical {f_hat} (se {se})");
        }
    }
}

#[test]
fn every_draw_satisfies_the_constraints() {
    for doubly in [true, false] {
        let spec = BayesModelSpec { beta_doubly_centred: doubly, ..Default::default() };
        let (_, _, grid) = synthetic([0.1, 0.1, 0.04, 0.05], 5);
        let model = HierarchicalModel::new(spec, &grid).unwrap();
        let draws = sample(&model, &SamplerConfig { chains: 2, ..cfg(300, 300, 13) }).unwrap();
        for x in draws.iter_draws() {
            let p = model.params_from_constrained(x).unwrap();
            assert!(p.alpha.iter().sum::<f64>().abs() < 1e-12);
            for t in 0..T {
                assert!((0..D).map(|d| p.beta[d * T + t]).sum::<f64>().abs() < 1e-12);
            }
            if doubly {
                for d in 0..D {
                    assert!(p.beta[d * T..(d + 1) * T].iter().sum::<f64>().abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn energy_error_shrinks_with_the_step_size() {
    let (model, truth, _) = synthetic([0.1, 0.1, 0.04, 0.05], 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut q = model.unconstrain(&truth);
    for v in &mut q {
        *v += 0.01 * rng.random_range(-1.0..1.0);
    }
    let p: Vec<f64> = (0..q.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    // a fixed trajectory length of 0.2
    let drift: Vec<f64> = [0.004, 0.002, 0.001].iter().map(|&eps| energy_drift(&model, &q, &p, eps, (0.2 / eps) as usize)).collect();
    assert!(drift[0] > drift[1] && drift[1] > drift[2], "{drift:?}");
    assert!(drift[2] < 0.05, "{drift:?}");
}

struct StdNormal;

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad[0] = -x[0];
        -x[0] * x[0] / 2.0
    }
}

#[test]
fn standard_normal_draws_pass_kolmogorov_smirnov() {
    let out = run_chain(&StdNormal, &SamplerConfig { chains: 1, warmup: 1000, keep: 10_000, seed: 14, ..Default::default() }, 0).unwrap();
    let mut xs: Vec<f64> = out.draws.iter().map(|d| d[0]).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // asymptotic 1% critical value of the one-sample statistic
    assert!(ks < 1.6276 / n.sqrt(), "KS statistic {ks}");
    assert!(out.stats.iter().all(|s| !s.divergent));
}

#[test]
fn identical_seeds_give_bit_identical_draws() {
    let (model, _, _) = synthetic([0.1, 0.1, 0.04, 0.05], 8);
    let c = cfg(150, 100, 15);
    let bits = |d: &PosteriorDraws| d.iter_draws().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| sample(&model, &c).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(bits(&a), bits(&b));
    // each chain is a function of its own stream only
    let two = sample(&model, &SamplerConfig { chains: 2, ..c }).unwrap();
    assert_eq!(bits(&two), bits(&a)[..bits(&two).len()]);
    let other = sample(&model, &SamplerConfig { seed: 16, ..c }).unwrap();
    assert_ne!(bits(&other), bits(&a));
}

#[test]
fn iid_chains_look_converged() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let chains: Vec<Vec<f64>> = (0..4).map(|_| (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let rhat = split_rhat(&chains).unwrap();
    let ess = bulk_ess(&chains).unwrap();
    assert!((0.999..1.01).contains(&rhat), "rhat {rhat}");
    assert!((3000.0..5000.0).contains(&ess), "ess {ess}");
}

#[test]
fn separated_chains_are_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut chains = Vec::new();
    for m in [0.0, 5.0] {
        chains.push((0..1000).map(|_| m + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>());
    }
    // Rank normalization bounds the statistic: perfectly separated halves of a
    // normal give W = 1 - 2/pi and var+ = W + (2/pi) * 4/3, so rhat tends to 1.83.
    let w = 1.0 - 2.0 / std::f64::consts::PI;
    let limit = ((w + 8.0 / (3.0 * std::f64::consts::PI)) / w).sqrt();
    let rhat = split_rhat(&chains).unwrap();
    assert!(rhat > 1.8 && rhat < limit + 1e-3, "rhat {rhat} limit {limit}");
}

#[test]
fn diagnostics_match_the_reference_implementation() {
    let chains_csv = include_str!("fixtures/chains.csv");
    let mut lines = chains_csv.lines();
    let names: Vec<&str> = lines.next().unwrap().split(',').skip(2).collect();
    let mut per: Vec<Vec<Vec<f64>>> = vec![Vec::new(); names.len()];
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let c: usize = f[0].parse().unwrap();
        for (k, v) in f[2..].iter().enumerate() {
            if per[k].len() <= c {
                per[k].push(Vec::new());
            }
            per[k][c].push(v.parse().unwrap());
        }
    }
    let reference = include_str!("fixtures/chains_reference.csv");
    for line in reference.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let k = names.iter().position(|n| *n == f[0]).unwrap();
        let (rhat, ess): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        let got_r = split_rhat(&per[k]).unwrap();
        let got_e = bulk_ess(&per[k]).unwrap();
        assert!((got_r - rhat).abs() < 1e-6, "{}: rhat {got_r} vs {rhat}", f[0]);
        assert!((got_e - ess).abs() < 1e-6 * ess, "{}: ess {got_e} vs {ess}", f[0]);
    }
}

#[test]
fn reported_ess_never_exceeds_the_draw_count() {
    let model = prior_model(BayesModelSpec::default());
    let draws = sample(&model, &SamplerConfig { chains: 2, ..cfg(200, 200, 19) }).unwrap();
    let diag = diagnose(&draws).unwrap();
    assert!(diag.params.iter().all(|p| p.ess.unwrap() <= 400.0));
    // between-chain variance is non-negative, so rhat >= sqrt((n - 1) / n) for split halves of n
    let floor = (99.0f64 / 100.0).sqrt();
    assert!(diag.params.iter().all(|p| p.rhat.unwrap() >= floor - 1e-12));
    let csv = diag.to_csv();
    assert!(csv.starts_with("parameter,rhat,ess\nmu[0],"));
    assert!(csv.lines().last().unwrap().contains("divergences="));
}

#[test]
fn posterior_intervals_cover_known_parameters() {
    // 20 grids drawn at sigma = 0.05; coverage pooled over all parameters and runs
    let scales = [0.1, 0.1, 0.04, 0.05];
    let mut covered = 0;
    let mut total = 0;
    for run in 0..20u64 {
        let (model, truth, _) = synthetic(scales, 100 + run);
        let draws = sample(&model, &cfg(1000, 1000, run)).unwrap();
        let summary = summarize(&draws);
        for (s, t) in summary.iter().zip(truth.to_vec()) {
            total += 1;
            covered += usize::from(s.lower <= t && t <= s.upper);
        }
    }
    let rate = covered as f64 / total as f64;
    assert!(rate >= 0.9, "pooled coverage {rate}");
}

#[test]
fn reference_grid_converges() {
    let (model, _, _) = synthetic([0.1, 0.1, 0.04, 0.05], 0);
    let draws = sample(&model, &cfg(2000, 2000, 0)).unwrap();
    let diag = diagnose(&draws).unwrap();
    assert!(diag.max_rhat.unwrap() < 1.01, "max rhat {:?}", diag.max_rhat);
    assert!(!draws.high_divergence, "{} divergences", draws.divergences);
    assert_eq!(draws.total_draws(), 8000);
    assert!(draws.chains.iter().all(|c| c.stats.len() == 2000));
}

#[test]
fn replicates_from_the_fitted_model_fall_inside_predictive_intervals() {
    let (model, _, grid) = synthetic([0.1, 0.1, 0.04, 0.05], 21);
    let draws = sample(&model, &cfg(1000, 1000, 21)).unwrap();
    // one joint draw from the posterior predictive serves as the new grid
    let pick = draws.chains[1].draws[517].clone();
    let fresh = simulate_grid(&model, &model.params_from_constrained(&pick).unwrap(), 22);
    let ppc = posterior_predictive(&draws, &model, &fresh, 23).unwrap();
    assert!((0.92..=0.98).contains(&ppc.coverage), "coverage {}", ppc.coverage);
    assert_eq!(ppc.cells.len(), 216);
    assert!(ppc.cells.iter().all(|c| (0.0..=1.0).contains(&c.ppc_p)));
    let per_domain: usize = ppc.domains.iter().map(|d| d.within).sum();
    assert_eq!(per_domain, ppc.within);
    // the original grid too, against its own fit
    let own = posterior_predictive(&draws, &model, &grid, 23).unwrap();
    assert!(own.coverage >= 0.9);
}

#[test]
fn a_displaced_cell_is_flagged() {
    let (_, truth, mut grid) = synthetic([0.1, 0.1, 0.04, 0.05], 24);
    let k = grid.index(2, 4, 1);
    grid.cells[k].as_mut().unwrap().theta += 10.0 * truth.sigma;
    let model = HierarchicalModel::new(BayesModelSpec::default(), &grid).unwrap();
    let draws = sample(&model, &cfg(1000, 1000, 24)).unwrap();
    let ppc = posterior_predictive(&draws, &model, &grid, 25).unwrap();
    let cell = ppc.cells.iter().find(|c| c.domain == "Crypto" && c.horizon == 4 && c.size == 1).unwrap();
    assert!(!cell.within, "{cell:?}");
    assert!(cell.ppc_p < 0.01, "{cell:?}");
}

#[test]
fn draws_csv_has_one_row_per_draw() {
    let model = prior_model(BayesModelSpec::default());
    let draws = sample(&model, &SamplerConfig { chains: 2, ..cfg(50, 10, 26) }).unwrap();
    let csv = draws_csv(&draws);
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("chain,iter,mu[0],"));
    assert_eq!(header.split(',').count(), 2 + 79);
    assert_eq!(lines.count(), 20);
}

#[test]
fn single_precision_model_agrees_with_double() {
    let (model, truth, grid) = synthetic([0.1, 0.1, 0.04, 0.05], 27);
    let grid32 = marketcal::SlopeGrid32 {
        domains: grid.domains.clone(),
        horizons: grid.horizons,
        sizes: grid.sizes,
        cells: grid.cells.iter().map(|c| c.map(|c| marketcal::decomp::CellSlope { theta: c.theta as f32, se: c.se as f32, n: c.n })).collect(),
    };
    let m32 = marketcal::HierarchicalModel32::new(BayesModelSpec::default(), &grid32).unwrap();
    let x = model.unconstrain(&truth);
    let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    let (lp, g) = model.log_posterior_and_gradient(&x).unwrap();
    let (lp32, g32) = m32.log_posterior_and_gradient(&x32).unwrap();
    assert!((lp - f64::from(lp32)).abs() < 1e-4 * lp.abs().max(1.0));
    for (a, b) in g.iter().zip(&g32) {
        assert!((a - f64::from(*b)).abs() < 1e-3 * a.abs().max(1.0), "{a} vs {b}");
    }
}
