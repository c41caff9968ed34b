use marketcal::decomp::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("D{i}")).collect()
}

fn random_components(rng: &mut ChaCha8Rng, d: usize, t: usize, s: usize) -> ComponentSet<f64> {
    let mut v = |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-scale..scale)).collect() };
    let mu = v(t, 1.0).into_iter().map(|x| x + 1.2).collect();
    ComponentSet::centred(names(d), mu, v(d, 0.3), v(d * t, 0.3), v(d * s, 0.2))
}

fn noisy_random(rng: &mut ChaCha8Rng, d: usize, t: usize, s: usize, sd: f64) -> SlopeGrid<f64> {
    let mut g = random_components(rng, d, t, s).generate();
    for cell in g.cells.iter_mut().flatten() {
        cell.theta += rng.random_range(-sd..sd);
    }
    g
}

#[derive(Clone, Copy)]
enum Coding {
    /// Reference level 0 dropped.
    Dummy,
    /// Last level coded -1.
    SumToZero,
}

fn code(coding: Coding, k: usize, level: usize) -> Vec<f64> {
    match coding {
        Coding::Dummy => (1..k).map(|j| (level == j) as u8 as f64).collect(),
        Coding::SumToZero => (0..k - 1)
            .map(|j| if level == k - 1 { -1.0 } else { (level == j) as u8 as f64 })
            .collect(),
    }
}

/// Independent oracle: explicit design matrix, solved by SVD.
fn oracle_rss_coded(g: &SlopeGrid<f64>, terms: &[Term], w: Option<&[f64]>, coding: Coding) -> f64 {
    let (d, t, s) = (g.d(), g.horizons, g.sizes);
    let y = g.require_complete().unwrap();
    let n = y.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b, c) = (i / (t * s), (i / s) % t, i % s);
        let (cd, ct, cs) = (code(coding, d, a), code(coding, t, b), code(coding, s, c));
        let mut r = vec![1.0];
        for &term in terms {
            match term {
                Term::Mu => r.extend(&ct),
                Term::Alpha => r.extend(&cd),
                Term::Beta => cd.iter().for_each(|x| r.extend(ct.iter().map(|y| x * y))),
                Term::Gamma => (0..d).for_each(|k| r.extend(cs.iter().map(|y| if k == a { *y } else { 0.0 }))),
                Term::SizeHorizon => ct.iter().for_each(|x| r.extend(cs.iter().map(|y| x * y))),
            }
        }
        rows.push(r);
    }
    let sw: Vec<f64> = (0..n).map(|i| w.map_or(1.0, |w| w[i]).sqrt()).collect();
    let x = DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j] * sw[i]);
    let yv = DVector::from_fn(n, |i, _| y[i] * sw[i]);
    let beta = x.clone().svd(true, true).solve(&yv, 1e-12).unwrap();
    (yv - x * beta).norm_squared()
}

fn oracle_rss(g: &SlopeGrid<f64>, terms: &[Term], w: Option<&[f64]>) -> f64 {
    oracle_rss_coded(g, terms, w, Coding::Dummy)
}

#[test]
fn horizon_only_grid_has_no_other_components() {
    let f = |t: usize| 0.8 + 0.1 * t as f64;
    let g = SlopeGrid::from_fn(names(6), 9, 4, |_, t, _| f(t));
    let c = fit_sequential(&g).unwrap();
    for t in 0..9 {
        assert!((c.mu[t] - f(t)).abs() < 1e-14);
    }
    assert!(c.alpha.iter().chain(&c.beta).chain(&c.gamma).all(|&x| x.abs() < 1e-14));
}

#[test]
fn noiseless_round_trip_and_unit_r2() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let truth = random_components(&mut rng, 6, 9, 4);
        let g = truth.generate();
        let c = fit_sequential(&g).unwrap();
        assert!(c.max_abs_diff(&truth) < 1e-12);
        assert!(c.constraint_violation() < 1e-12);
        for ty in [SsType::I, SsType::II, SsType::III] {
            let v = variance_decomposition(&g, &CANONICAL_ORDER, ty).unwrap();
            assert!((v.total_r2 - 1.0).abs() < 1e-10, "{ty:?}");
        }
    }
}

#[test]
fn fitted_plus_residual_is_observed() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = noisy_random(&mut rng, 6, 9, 4, 0.2);
    let c = fit_sequential(&g).unwrap();
    for d in 0..6 {
        for t in 0..9 {
            for s in 0..4 {
                let obs = g.get(d, t, s).unwrap().theta;
                assert!((c.fitted(d, t, s) + c.residual[g.index(d, t, s)] - obs).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn types_match_regression_oracle_on_small_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = noisy_random(&mut rng, 2, 3, 2, 0.3);
    let full = oracle_rss(&g, &CANONICAL_ORDER, None);
    let without = |x: Term| -> Vec<Term> { CANONICAL_ORDER.iter().copied().filter(|&o| o != x).collect() };
    let t3 = variance_decomposition(&g, &CANONICAL_ORDER, SsType::III).unwrap();
    let t2 = variance_decomposition(&g, &CANONICAL_ORDER, SsType::II).unwrap();
    for row in &t3.rows {
        let expect = oracle_rss_coded(&g, &without(row.component), None, Coding::SumToZero) - full;
        assert!((row.ss - expect).abs() < 1e-9, "III {:?}: {} vs {}", row.component, row.ss, expect);
    }
    let type2 = [
        (Term::Mu, oracle_rss(&g, &[Term::Alpha, Term::Gamma], None) - oracle_rss(&g, &[Term::Mu, Term::Alpha, Term::Gamma], None)),
        (Term::Alpha, oracle_rss(&g, &[Term::Mu], None) - oracle_rss(&g, &[Term::Mu, Term::Alpha], None)),
        (Term::Beta, oracle_rss(&g, &without(Term::Beta), None) - full),
        (Term::Gamma, oracle_rss(&g, &without(Term::Gamma), None) - full),
    ];
    for (row, (term, expect)) in t2.rows.iter().zip(type2) {
        assert_eq!(row.component, term);
        assert!((row.ss - expect).abs() < 1e-9, "II {term:?}");
    }
    assert!((t3.ss_residual - full).abs() < 1e-9);
}

#[test]
fn balanced_grid_types_coincide_and_match_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = noisy_random(&mut rng, 6, 9, 4, 0.2);
    let c = fit_sequential(&g).unwrap();
    let seq = sequential_variance(&g, &c).unwrap();
    let ols = fit_ols(&g).unwrap();
    assert!(ols.max_abs_diff(&c) < 1e-10);
    for ty in [SsType::I, SsType::II, SsType::III] {
        let v = variance_decomposition(&g, &CANONICAL_ORDER, ty).unwrap();
        for (a, b) in v.rows.iter().zip(&seq.rows) {
            assert!((a.ss - b.ss).abs() < 1e-9, "{ty:?} {:?}", a.component);
        }
    }
    let last = seq.rows.last().unwrap().cumulative_r2;
    assert!((last - seq.total_r2).abs() < 1e-12);
}

#[test]
fn type_one_order_dependence_telescopes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = noisy_random(&mut rng, 3, 4, 3, 0.3);
    let order = [Term::Gamma, Term::Beta, Term::Mu, Term::Alpha];
    let v = variance_decomposition(&g, &order, SsType::I).unwrap();
    let sum: f64 = v.rows.iter().map(|r| r.marginal_r2).sum();
    assert!((sum - v.total_r2).abs() < 1e-12);
}

#[test]
fn wls_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = noisy_random(&mut rng, 6, 9, 4, 0.2);
    let (cw, tw) = fit_wls(&g).unwrap();
    assert!(cw.max_abs_diff(&fit_sequential(&g).unwrap()) < 1e-10);
    assert!(tw.weighted);

    let mut heavy = g.clone();
    let target = heavy.index(2, 4, 1);
    heavy.cells[target].as_mut().unwrap().se = 1e-3;
    let (c, t) = fit_wls(&heavy).unwrap();
    let obs = heavy.cells[target].unwrap().theta;
    assert!((c.fitted(2, 4, 1) - obs).abs() < 1e-3);
    let w: Vec<f64> = heavy.weights().unwrap();
    let oracle = oracle_rss(&heavy, &CANONICAL_ORDER, Some(&w));
    assert!((t.ss_residual - oracle).abs() < 1e-6 * oracle.max(1.0));

    let mut zero = g.clone();
    zero.cells[0].as_mut().unwrap().se = 0.0;
    assert!(matches!(fit_wls(&zero), Err(DecompError::DegenerateWeight(_))));
}

#[test]
fn f_table_reproduces_published_arithmetic() {
    let t = f_table(&[("mu", 2.934, 8), ("alpha", 1.435, 5), ("beta", 2.562, 40), ("gamma", 1.624, 18)], 1.247, 144).unwrap();
    let f: Vec<f64> = t.rows.iter().map(|r| r.f).collect();
    let eta: Vec<f64> = t.rows.iter().map(|r| r.partial_eta2).collect();
    for (got, want, tol) in [(f[0], 42.37, 0.2), (f[1], 33.16, 0.2), (f[2], 7.40, 0.05), (f[3], 10.42, 0.1)] {
        assert!((got - want).abs() < tol, "{got} vs {want}");
    }
    for (got, want) in eta.iter().zip([0.702, 0.535, 0.673, 0.566]) {
        assert!((got - want).abs() < 0.002);
    }
    assert!(t.rows.iter().all(|r| r.p_value < 1e-16));

    let z = f_table(&[("none", 0.0, 3)], 1.0, 10).unwrap();
    assert_eq!((z.rows[0].f, z.rows[0].partial_eta2, z.rows[0].p_value), (0.0, 0.0, 1.0));
    assert!(f_table::<f64>(&[], 1.0, 0).is_err());
    assert_eq!(format_p_value(1e-310), "< 1e-300");
    assert_eq!(numeric_p_value(1e-310), 0.0);
}

#[test]
fn f_tests_use_component_degrees_of_freedom() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = noisy_random(&mut rng, 6, 9, 4, 0.2);
    let (c, v, f) = decompose(&g).unwrap();
    let df: Vec<usize> = f.rows.iter().map(|r| r.df).collect();
    assert_eq!(df, [8, 5, 40, 18]);
    assert_eq!(f.residual_df, 144);
    for (r, vr) in f.rows.iter().zip(&v.rows) {
        assert!((r.ss - vr.ss).abs() < 1e-10);
    }
    assert!((f.residual_ss - c.residual.iter().map(|e| e * e).sum::<f64>()).abs() < 1e-12);
}

#[test]
fn incomplete_grid_lists_missing_cells() {
    let mut g = SlopeGrid::from_fn(names(2), 3, 2, |_, _, _| 1.0);
    g.cells[3] = None;
    match fit_sequential(&g) {
        Err(DecompError::Incomplete(m)) => assert_eq!(m, ["(D0, h1, s1)"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn scale_effects() {
    let g = SlopeGrid::from_fn(names(2), 9, 4, |_, t, _| 1.0 + 0.05 * t as f64);
    assert_eq!(default_scale_effect(&g, "D0").unwrap().delta, 0.0);
    let g = SlopeGrid::from_fn(names(2), 9, 4, |_, t, s| 1.0 + 0.05 * t as f64 + if s == 3 { 0.1 } else { 0.0 });
    let e = default_scale_effect(&g, "D1").unwrap();
    assert!((e.delta - 0.1).abs() < 1e-12);
    assert!((e.delta - e.per_horizon_diffs.iter().sum::<f64>() / 9.0).abs() < 1e-15);
    assert!(matches!(default_scale_effect(&g, "nope"), Err(DecompError::UnknownDomain(_))));
    let mut gap = g.clone();
    let i = gap.index(0, 4, 3);
    gap.cells[i] = None;
    assert!(matches!(default_scale_effect(&gap, "D0"), Err(DecompError::Incomplete(_))));
}

#[test]
fn size_horizon_term_captures_a_pure_pattern() {
    let cells = marketcal::ingest::Grid {
        cells: Default::default(),
        market_ids: vec![],
        domains: names(6),
        report: Default::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let base = random_components(&mut rng, 6, 9, 4);
    let plain = base.generate();
    let none = size_horizon_check(&plain, &cells).unwrap();
    assert!(none.added_r2.abs() < 1e-10);

    // doubly centred size-by-horizon surface shared by all domains
    let raw: Vec<f64> = (0..36).map(|_| rng.random_range(-0.3..0.3)).collect();
    let sh = ComponentSet::centred(vec!["x".into(); 4], vec![0.0; 9], vec![0.0; 4], [&raw[..]].concat(), vec![0.0; 4]);
    let mut g = plain.clone();
    for d in 0..6 {
        for t in 0..9 {
            for s in 0..4 {
                let i = g.index(d, t, s);
                g.cells[i].as_mut().unwrap().theta += sh.beta[s * 9 + t];
            }
        }
    }
    let chk = size_horizon_check(&g, &cells).unwrap();
    let ss_sh: f64 = 6.0 * sh.beta.iter().map(|x| x * x).sum::<f64>();
    let y = g.require_complete().unwrap();
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    assert!((chk.added_r2 - ss_sh / ss_tot).abs() < 1e-9, "{} vs {}", chk.added_r2, ss_sh / ss_tot);
    let with_sh: Vec<Term> = CANONICAL_ORDER.iter().copied().chain([Term::SizeHorizon]).collect();
    assert!(oracle_rss(&g, &with_sh, None) < 1e-18);
}

#[test]
fn platform_deltas() {
    let mut a = HorizonSlopeTable::default();
    let mut b = HorizonSlopeTable::default();
    for h in 0..9 {
        a.insert("Politics", h, 1.0 + 0.1 * h as f64, 100 + h as u64);
        b.insert("Politics", h, 1.2 + 0.1 * h as f64, 50);
    }
    let same = platform_delta(&a, &a, &DEFAULT_RELIABLE_BINS).unwrap();
    assert!(same.rows.iter().all(|r| r.delta == 0.0));
    let cmp = platform_delta(&a, &b, &DEFAULT_RELIABLE_BINS).unwrap();
    assert!(cmp.rows.iter().all(|r| (r.delta - 0.2).abs() < 1e-12));
    assert_eq!(cmp.rows.iter().filter(|r| r.reliable).count(), 7);
    let m = &cmp.means[0];
    let want_a: f64 = (2..9).map(|h| (100 + h) as f64 * (1.0 + 0.1 * h as f64)).sum::<f64>() / (2..9).map(|h| (100 + h) as f64).sum::<f64>();
    assert!((m.mean_a - want_a).abs() < 1e-12);
    assert!((m.mean_b - 1.7).abs() < 1e-12);
    let mut other = HorizonSlopeTable::default();
    other.insert("Sports", 0, 1.0, 1);
    assert!(matches!(platform_delta(&a, &other, &DEFAULT_RELIABLE_BINS), Err(DecompError::NoOverlap)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn location_invariance(seed in any::<u64>(), shift in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = noisy_random(&mut rng, 6, 9, 4, 0.2);
        let mut h = g.clone();
        h.cells.iter_mut().flatten().for_each(|c| c.theta += shift);
        let (c1, v1, f1) = decompose(&g).unwrap();
        let (c2, v2, f2) = decompose(&h).unwrap();
        for t in 0..9 {
            prop_assert!((c2.mu[t] - c1.mu[t] - shift).abs() < 1e-10);
        }
        for (x, y) in c1.alpha.iter().chain(&c1.beta).chain(&c1.gamma).zip(c2.alpha.iter().chain(&c2.beta).chain(&c2.gamma)) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        prop_assert!((v1.total_r2 - v2.total_r2).abs() < 1e-10);
        for (a, b) in f1.rows.iter().zip(&f2.rows) {
            prop_assert!((a.f - b.f).abs() < 1e-6 * a.f.max(1.0));
        }
    }

    #[test]
    fn relabeling_equivariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nd, nt, ns) = (4, 5, 3);
        let g = noisy_random(&mut rng, nd, nt, ns, 0.2);
        let perm = [2usize, 0, 3, 1];
        let mut h = SlopeGrid::<f64>::empty(perm.iter().map(|&p| g.domains[p].clone()).collect(), nt, ns);
        for (new_d, &old_d) in perm.iter().enumerate() {
            for t in 0..nt {
                for s in 0..ns {
                    let dst = h.index(new_d, t, s);
                    h.cells[dst] = Some(*g.get(old_d, t, s).unwrap());
                }
            }
        }
        let (c1, v1, _) = decompose(&g).unwrap();
        let (c2, v2, _) = decompose(&h).unwrap();
        for (new_d, &old_d) in perm.iter().enumerate() {
            prop_assert!((c2.alpha[new_d] - c1.alpha[old_d]).abs() < 1e-12);
            for t in 0..nt {
                prop_assert!((c2.beta[new_d * nt + t] - c1.beta[old_d * nt + t]).abs() < 1e-12);
            }
        }
        for t in 0..nt {
            prop_assert!((c2.mu[t] - c1.mu[t]).abs() < 1e-12);
        }
        prop_assert!((v1.total_r2 - v2.total_r2).abs() < 1e-12);
    }
}
