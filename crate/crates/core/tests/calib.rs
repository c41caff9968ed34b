use std::collections::BTreeMap;

use marketcal::calib::{
    fit_recalibration, fit_table, leave_one_out, penalized_loglik, points_from_table, pooled_slope, recalibrate,
    score_and_information, weighting_gap, FitConfig, PriceTable, WeightScheme,
};
use marketcal::ingest::{
    assemble_grid, CellData, CellKey, DomainRuleSet, FilterConfig, MarketRecord, Observation, Outcome, Side,
    TradeRecord, BinningConfig, DAY_MS,
};
use marketcal::scalar::{logit, sigmoid};
use marketcal::synth::{generate, oracle_fit, CellSelector, SynthSpec, TradesPerMarket};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cell(observations: Vec<Observation>) -> CellData {
    let mut observations = observations;
    observations.sort();
    CellData { key: CellKey { domain: "X".into(), horizon_bin: 0, size_bin: 0 }, observations }
}

fn ob(market: u32, price_cents: u8, outcome: bool, count: u64) -> Observation {
    Observation { market, price_cents, outcome, count, horizon_ms: 0 }
}

fn fixture_40() -> Vec<Observation> {
    let text = include_str!("fixtures/cell_40.csv");
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            ob(i as u32, f[0].parse().unwrap(), f[1] == "1", f[2].parse().unwrap())
        })
        .collect()
}

/// Observations with outcomes drawn from `sigmoid(a + b logit p)`.
fn random_cell(rng: &mut ChaCha8Rng, n: usize, a: f64, b: f64) -> Vec<Observation> {
    (0..n)
        .map(|i| {
            let cents: u8 = rng.random_range(5..=95);
            let p = f64::from(cents) / 100.0;
            let y = rng.random::<f64>() < sigmoid(a + b * logit(p));
            ob(i as u32, cents, y, rng.random_range(1..=50))
        })
        .collect()
}

#[test]
fn forty_row_fixture_matches_grid_search() {
    let obs = fixture_40();
    assert_eq!(obs.len(), 40);
    for (scheme, contract) in [(WeightScheme::Trade, false), (WeightScheme::Contract, true)] {
        let fit = fit_recalibration::<f64>(&cell(obs.clone()), &FitConfig::default().with_scheme(scheme)).unwrap();
        let (a, b) = oracle_fit(&obs, 10.0, contract).unwrap();
        assert!((fit.a - a).abs() < 1e-3 && (fit.b - b).abs() < 1e-3, "{scheme:?}: newton ({}, {}) oracle ({a}, {b})", fit.a, fit.b);
    }
}

#[test]
fn newton_matches_grid_search_on_random_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..50 {
        let n = rng.random_range(40..400);
        let a = rng.random_range(-1.0..1.0);
        let b = rng.random_range(0.5..2.0);
        let obs = random_cell(&mut rng, n, a, b);
        let contract = k % 2 == 1;
        let scheme = if contract { WeightScheme::Contract } else { WeightScheme::Trade };
        let fit = fit_recalibration::<f64>(&cell(obs.clone()), &FitConfig::default().with_scheme(scheme)).unwrap();
        let (oa, ob) = oracle_fit(&obs, 10.0, contract).unwrap();
        assert!((fit.a - oa).abs() < 1e-3 && (fit.b - ob).abs() < 1e-3, "cell {k}: ({}, {}) vs ({oa}, {ob})", fit.a, fit.b);
    }
}

#[test]
fn mixture_pools_between_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let flat = random_cell(&mut rng, 4000, 0.0, 0.5);
    let steep = random_cell(&mut rng, 4000, 0.0, 2.0);
    let cfg = FitConfig::default();
    let b_flat = pooled_slope::<f64>(&flat, &cfg).unwrap().b;
    let b_steep = pooled_slope::<f64>(&steep, &cfg).unwrap().b;
    let all: Vec<Observation> = flat.iter().chain(&steep).copied().collect();
    let pooled = pooled_slope::<f64>(&all, &cfg).unwrap();
    assert!(b_flat < pooled.b && pooled.b < b_steep, "{b_flat} {} {b_steep}", pooled.b);
    let (_, ob) = oracle_fit(&all, 10.0, false).unwrap();
    assert!((pooled.b - ob).abs() < 1e-3);
}

#[test]
fn leave_one_out_equals_refit_on_complement() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut groups = BTreeMap::new();
    for (label, b) in [("flat", 0.6), ("mid", 1.0), ("steep", 1.8)] {
        groups.insert(label.to_string(), random_cell(&mut rng, 600, 0.1, b));
    }
    let cfg = FitConfig::default().with_scheme(WeightScheme::Contract);
    let loo = leave_one_out::<f64>(&groups, &cfg).unwrap();
    for (label, fit) in &loo {
        let rest: Vec<Observation> =
            groups.iter().filter(|(k, _)| *k != label).flat_map(|(_, v)| v.iter().copied()).collect();
        let direct = pooled_slope::<f64>(&rest, &cfg).unwrap();
        let fit = fit.as_ref().unwrap();
        assert!((fit.a - direct.a).abs() < 1e-12 && (fit.b - direct.b).abs() < 1e-12);
    }
}

#[test]
fn single_big_trade_sets_the_gap_sign() {
    // 999 calibrated single-contract trades, plus one 1000-contract trade at 90c that resolves no.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let close = 10 * DAY_MS;
    let ts = close - 3 * DAY_MS;
    let mut markets = Vec::new();
    let mut trades = Vec::new();
    let mut add = |id: String, cents: u8, yes: bool, count: u64| {
        markets.push(MarketRecord {
            market_id: id.clone(),
            event_ticker: "EV".into(),
            title: String::new(),
            close_time_ms: close,
            outcome: if yes { Outcome::Yes } else { Outcome::No },
        });
        trades.push(TradeRecord { market_id: id, price_cents: cents, count, side: Side::Yes, timestamp_ms: ts });
    };
    for i in 0..999 {
        let cents: u8 = rng.random_range(10..=90);
        let yes = rng.random::<f64>() < f64::from(cents) / 100.0;
        add(format!("m{i}"), cents, yes, 1);
    }
    add("big".into(), 90, false, 1000);
    let filt = FilterConfig {
        min_trades_per_market: 1,
        min_trades_per_cell: 1,
        exclude_fallback_domain: false,
        ..FilterConfig::default()
    };
    let grid = assemble_grid(&trades, &markets, &DomainRuleSet::default(), &BinningConfig::default(), &filt).unwrap();
    let gap = weighting_gap::<f64>(&grid, "Other", 9, &FitConfig::default());
    assert_eq!(gap.bins.len(), 1);
    let g = &gap.bins[0];
    assert_eq!(g.horizon_bin, 6);
    assert!(g.gap < 0.0, "gap {}", g.gap);

    // Refit oracle: the pooled table built directly from the raw trades.
    let mut table = PriceTable::default();
    for t in &trades {
        let yes = markets.iter().find(|m| m.market_id == t.market_id).unwrap().outcome == Outcome::Yes;
        table.add(t.price_cents, yes, 1, t.count);
    }
    let trade = fit_table::<f64>(&table, &FitConfig::default()).unwrap();
    let contract = fit_table::<f64>(&table, &FitConfig::default().with_scheme(WeightScheme::Contract)).unwrap();
    assert!((g.gap - (contract.b - trade.b)).abs() < 1e-12, "{} vs {}", g.gap, contract.b - trade.b);
}

#[test]
fn unit_counts_give_zero_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obs: Vec<Observation> = random_cell(&mut rng, 500, 0.0, 1.2).into_iter().map(|o| Observation { count: 1, ..o }).collect();
    let t = PriceTable::from_observations(&obs);
    let ft = fit_table::<f64>(&t, &FitConfig::default()).unwrap();
    let fc = fit_table::<f64>(&t, &FitConfig::default().with_scheme(WeightScheme::Contract)).unwrap();
    assert_eq!((ft.a, ft.b), (fc.a, fc.b));
}

#[test]
fn single_trade_markets_recover_the_slope() {
    // With one trade per market every trade has an independent outcome.
    let spec = SynthSpec {
        domains: vec!["Politics".into()],
        structure: marketcal::synth::StructureSpec { mu: vec![1.5; 9], ..Default::default() },
        markets_per_cell: 20_000,
        trades_per_market: TradesPerMarket::Fixed(1),
        cells: vec![CellSelector { domain: "Politics".into(), horizon: 6, size: 0 }],
        seed: 17,
        ..SynthSpec::default()
    };
    let out = generate(&spec).unwrap();
    let filt = FilterConfig { min_trades_per_market: 1, ..FilterConfig::default() };
    let grid = assemble_grid(&out.trades, &out.markets, &out.rules, &spec.bins, &filt).unwrap();
    let cell = grid.get("Politics", 6, 0).unwrap();
    let fit = fit_recalibration::<f64>(cell, &FitConfig::default()).unwrap();
    assert!((fit.b - 1.5).abs() < 3.0 * fit.se_b, "b = {} +- {}", fit.b, fit.se_b);
    assert!(fit.a.abs() < 3.0 * fit.se_a);
}

fn table_from(obs: &[Observation]) -> PriceTable {
    PriceTable::from_observations(obs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_weights_and_c_together_keeps_the_fit(seed in 0u64..1000, k in 2u64..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = random_cell(&mut rng, 200, 0.3, 1.1);
        let base = fit_table::<f64>(&table_from(&obs), &FitConfig::default()).unwrap();
        let mut scaled = PriceTable::default();
        for o in &obs {
            scaled.add(o.price_cents, o.outcome, k, k * o.count);
        }
        // the penalty does not scale with the data, so C must shrink by k
        let cfg = FitConfig { regularization_c: 10.0 / k as f64, ..FitConfig::default() };
        let fit = fit_table::<f64>(&scaled, &cfg).unwrap();
        prop_assert!((fit.a - base.a).abs() < 1e-9 && (fit.b - base.b).abs() < 1e-9);
        prop_assert!((fit.loglik - k as f64 * base.loglik).abs() < 1e-8 * fit.loglik.abs());
    }

    #[test]
    fn optimum_is_stationary(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = random_cell(&mut rng, 300, -0.2, 0.9);
        let t = table_from(&obs);
        let cfg = FitConfig::default().with_scheme(WeightScheme::Contract);
        let fit = fit_table::<f64>(&t, &cfg).unwrap();
        let pts = points_from_table::<f64>(&t, WeightScheme::Contract);
        let (ga, gb, ..) = score_and_information(&pts, 10.0, fit.a, fit.b);
        prop_assert!(ga.hypot(gb) < 1e-6);
        let here = penalized_loglik(&pts, 10.0, fit.a, fit.b);
        for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            prop_assert!(penalized_loglik(&pts, 10.0, fit.a + da, fit.b + db) <= here);
        }
    }

    #[test]
    fn recalibrate_inverse_pair(cents in 1u32..100, k in 0usize..20) {
        let p = f64::from(cents) / 100.0;
        let theta = (3f64.ln() * (2.0 * k as f64 / 19.0 - 1.0)).exp();
        let back = recalibrate(recalibrate(p, theta).unwrap(), 1.0 / theta).unwrap();
        prop_assert!((back - p).abs() < 1e-12);
    }

    #[test]
    fn recalibrate_fixed_points_and_monotonicity(p in 0.001f64..0.999, q in 0.001f64..0.999, theta in 0.05f64..5.0) {
        prop_assert!((recalibrate(0.5, theta).unwrap() - 0.5).abs() < 1e-15);
        prop_assert!((recalibrate(p, 1.0).unwrap() - p).abs() < 1e-15);
        if p < q {
            prop_assert!(recalibrate(p, theta).unwrap() <= recalibrate(q, theta).unwrap());
        }
    }
}
