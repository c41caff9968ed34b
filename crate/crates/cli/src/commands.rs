//! One function per subcommand. Each reads its inputs, stages artifacts on the
//! run and returns; `main` commits the run.

use std::path::{Path, PathBuf};

use marketcal::bayes::{self, compare_alpha, diagnose, draws_csv, posterior_predictive, summarize, HierarchicalModel};
use marketcal::calib::{fit_grid, horizon_slopes, recalibrate, weighting_gap, FitConfig, WeightScheme};
use marketcal::decomp::{
    augmented_rows, component_rows, decompose, fit_sequential, fit_wls, numeric_p_value, platform_delta, scale_effect,
    scale_effect_aggregate, format_p_value, variance_decomposition, HorizonSlopeTable, ScaleEffect, ScaleVariant, SlopeGrid,
    SsType, VarianceTable, CANONICAL_ORDER,
};
use marketcal::ingest::{dataset_stats, Grid, HORIZON_LABELS, SIZE_LABELS};
use marketcal::resample::{bootstrap_scale_effect_between, BootstrapMethod, BootstrapRow};
use marketcal::synth::{generate, SynthSpec};
use serde::Serialize;

use crate::config::{InputPaths, PipelineConfig};
use crate::data::{assemble, cell_rows, load_dataset, matrix_domains, read_cells, read_draws, CellRow, Dataset, STATUS_OK};
use crate::error::{CliError, Result};
use crate::output::{csv_bytes, Run};

/// Price ranges and penalty strengths swept by `robustness`.
pub const ROBUSTNESS_PRICE_RANGES: [(u8, u8); 3] = [(2, 98), (5, 95), (10, 90)];
pub const ROBUSTNESS_C: [f64; 3] = [1.0, 10.0, 100.0];

/// Grid shared by the table of recalibrated prices: 1 to 99 cents.
const PRICE_CENTS: std::ops::RangeInclusive<u32> = 1..=99;

fn load_primary(run: &mut Run) -> Result<Dataset> {
    let input = run.config().input.clone();
    load_dataset(run, &input, "input", None)
}

fn slope_grid(domains: Vec<String>, cfg: &PipelineConfig, grid_fits: &marketcal::ingest::Grid, fit: &FitConfig) -> SlopeGrid<f64> {
    let fits = fit_grid::<f64>(grid_fits, fit);
    SlopeGrid::from_fits(domains, cfg.binning.horizon_bins(), cfg.binning.size_bins(), &fits)
}

fn cells_input(run: &mut Run, cells: &Path) -> Result<(SlopeGrid<f64>, Vec<CellRow>)> {
    run.input(cells)?;
    run.arg("cells", cells.display());
    read_cells(cells, run.config())
}

#[derive(Serialize)]
struct LedgerRow<'a> {
    source: &'a str,
    line: u64,
    message: &'a str,
}

#[derive(Serialize)]
struct DroppedCell<'a> {
    domain: &'a str,
    horizon_bin: usize,
    size_bin: usize,
    trades: usize,
}

pub fn ingest_stats(run: &mut Run) -> Result<()> {
    let ds = load_primary(run)?;
    let cfg = run.config().clone();
    run.add_csv("ingest_stats.csv", &dataset_stats(&ds.trades, &ds.markets, &ds.rules))?;
    let grid = assemble(&ds, &cfg, &cfg.filter)?;
    let report = &grid.report;
    let mut ledger = Vec::new();
    for (source, l) in [("trades", &ds.trade_ledger), ("markets", &ds.market_ledger), ("join", &report.ledger)] {
        ledger.extend(l.entries.iter().map(|e| LedgerRow { source, line: e.line, message: &e.message }));
    }
    run.add_csv("ledger.csv", &ledger)?;
    let dropped: Vec<DroppedCell> = report
        .cells_dropped
        .iter()
        .map(|(k, n)| DroppedCell { domain: &k.domain, horizon_bin: k.horizon_bin, size_bin: k.size_bin, trades: *n })
        .collect();
    let summary = serde_json::json!({
        "trade_rows": ds.trade_rows,
        "market_rows": ds.market_rows,
        "malformed_trades": ds.trade_ledger.len(),
        "malformed_markets": ds.market_ledger.len(),
        "trades_seen": report.trades_seen,
        "trades_retained": report.trades_retained,
        "markets_retained": report.markets_retained,
        "cells_retained": grid.cells.len(),
        "drops": report.drops,
        "cells_dropped": dropped,
    });
    run.add("ingest_report.json", serde_json::to_string_pretty(&summary).expect("report serializes") + "\n");
    Ok(())
}

#[derive(Serialize)]
struct HorizonSlopeRow {
    domain: String,
    horizon_bin: usize,
    horizon: &'static str,
    trades: Option<usize>,
    b: Option<f64>,
    se_b: Option<f64>,
    error: String,
}

#[derive(Serialize)]
struct GapRow {
    domain: String,
    horizon_bin: usize,
    b_trade: f64,
    b_contract: f64,
    gap: f64,
}

fn pooled_fit(cfg: &PipelineConfig) -> FitConfig {
    cfg.fit.with_scheme(cfg.pooled_weight_scheme)
}

fn horizon_rows(grid: &Grid, cfg: &PipelineConfig) -> Vec<HorizonSlopeRow> {
    let mut fits = horizon_slopes::<f64>(grid, cfg.binning.horizon_bins(), &pooled_fit(cfg));
    fits.sort_by(|x, y| {
        let pos = |d: &str| grid.domains.iter().position(|g| g == d);
        (pos(&x.0), x.1).cmp(&(pos(&y.0), y.1))
    });
    fits.into_iter()
        .map(|(domain, h, fit)| {
            let horizon = HORIZON_LABELS.get(h).copied().unwrap_or("");
            match fit {
                Ok(f) => HorizonSlopeRow { domain, horizon_bin: h, horizon, trades: Some(f.n), b: Some(f.b), se_b: Some(f.se_b), error: String::new() },
                Err(e) => HorizonSlopeRow { domain, horizon_bin: h, horizon, trades: None, b: None, se_b: None, error: e.to_string() },
            }
        })
        .collect()
}

pub fn fit_cells(run: &mut Run) -> Result<()> {
    let ds = load_primary(run)?;
    let cfg = run.config().clone();
    let grid = assemble(&ds, &cfg, &cfg.filter)?;
    let fits = fit_grid::<f64>(&grid, &cfg.fit);
    let domains = matrix_domains(&ds.rules, &cfg.filter);
    let rows = cell_rows(&domains, cfg.binning.horizon_bins(), cfg.binning.size_bins(), &fits);
    let ok = rows.iter().filter(|r| r.status == STATUS_OK).count();
    if ok < rows.len() {
        run.warn(format!("{} of {} cells have no slope", rows.len() - ok, rows.len()));
    }
    let unconverged = rows.iter().filter(|r| r.converged == Some(false)).count();
    if unconverged > 0 {
        run.warn(format!("{unconverged} cell fits stopped before the step tolerance"));
    }
    run.add_csv("cells.csv", &rows)?;
    run.add_csv("horizon_slopes.csv", &horizon_rows(&grid, &cfg))?;
    let mut gaps = Vec::new();
    for d in &grid.domains {
        let g = weighting_gap::<f64>(&grid, d, cfg.binning.horizon_bins(), &cfg.fit);
        gaps.extend(g.bins.iter().map(|b| GapRow {
            domain: d.clone(),
            horizon_bin: b.horizon_bin,
            b_trade: b.b_trade,
            b_contract: b.b_contract,
            gap: b.gap,
        }));
    }
    run.add_csv("weighting_gap.csv", &gaps)?;
    Ok(())
}

#[derive(Serialize)]
struct VarianceCsvRow {
    table: &'static str,
    weighted: bool,
    component: &'static str,
    ss: f64,
    marginal_r2: f64,
    cumulative_r2: f64,
}

fn variance_rows(label: &'static str, t: &VarianceTable<f64>, out: &mut Vec<VarianceCsvRow>) {
    for r in &t.rows {
        out.push(VarianceCsvRow {
            table: label,
            weighted: t.weighted,
            component: r.component.name(),
            ss: r.ss,
            marginal_r2: r.marginal_r2,
            cumulative_r2: r.cumulative_r2,
        });
    }
    out.push(VarianceCsvRow {
        table: label,
        weighted: t.weighted,
        component: "residual",
        ss: t.ss_residual,
        marginal_r2: t.ss_residual / t.ss_total,
        cumulative_r2: 1.0,
    });
    out.push(VarianceCsvRow {
        table: label,
        weighted: t.weighted,
        component: "total",
        ss: t.ss_total,
        marginal_r2: t.total_r2,
        cumulative_r2: t.total_r2,
    });
}

#[derive(Serialize)]
struct FCsvRow {
    source: String,
    ss: f64,
    df: usize,
    ms: f64,
    f: Option<f64>,
    p_value: Option<f64>,
    p_display: String,
    partial_eta2: Option<f64>,
}

pub fn decompose_cmd(run: &mut Run, cells: &Path) -> Result<()> {
    let (grid, _) = cells_input(run, cells)?;
    let (comps, type1, ftab) = decompose(&grid)?;
    let type2 = variance_decomposition(&grid, &CANONICAL_ORDER, SsType::II)?;
    let type3 = variance_decomposition(&grid, &CANONICAL_ORDER, SsType::III)?;
    let (wls_comps, wls) = fit_wls(&grid)?;
    let mut variance = Vec::new();
    variance_rows("type_i", &type1, &mut variance);
    variance_rows("type_ii", &type2, &mut variance);
    variance_rows("type_iii", &type3, &mut variance);
    variance_rows("wls_type_i", &wls, &mut variance);
    let mut ftests: Vec<FCsvRow> = ftab
        .rows
        .iter()
        .map(|r| FCsvRow {
            source: r.source.clone(),
            ss: r.ss,
            df: r.df,
            ms: r.ms,
            f: Some(r.f),
            p_value: Some(numeric_p_value(r.p_value)),
            p_display: format_p_value(r.p_value),
            partial_eta2: Some(r.partial_eta2),
        })
        .collect();
    ftests.push(FCsvRow {
        source: "residual".into(),
        ss: ftab.residual_ss,
        df: ftab.residual_df,
        ms: ftab.residual_ms,
        f: None,
        p_value: None,
        p_display: String::new(),
        partial_eta2: None,
    });
    run.add_csv("components.csv", &component_rows(&comps))?;
    run.add_csv("components_wls.csv", &component_rows(&wls_comps))?;
    run.add_csv("variance.csv", &variance)?;
    run.add_csv("ftests.csv", &ftests)?;
    run.add_csv("augmented.csv", &augmented_rows(&grid, &comps))?;
    Ok(())
}

fn scale_record(e: &ScaleEffect<f64>, horizons: usize) -> Vec<String> {
    let variant = match e.variant {
        ScaleVariant::WithinHorizon => "within_horizon",
        ScaleVariant::Aggregate => "aggregate",
    };
    let mut rec = vec![e.domain.clone(), variant.into(), e.size_lo.to_string(), e.size_hi.to_string(), e.delta.to_string()];
    for h in 0..horizons {
        rec.push(e.per_horizon_diffs.get(h).map_or_else(String::new, |v| v.to_string()));
    }
    rec
}

pub fn scale_effect_cmd(run: &mut Run, cells: &Path, from: usize, to: usize, aggregate: bool) -> Result<()> {
    let (grid, _) = cells_input(run, cells)?;
    let cfg = run.config().clone();
    let sizes = cfg.binning.size_bins();
    if from >= sizes || to >= sizes || from == to {
        return Err(CliError::Config(format!("--from and --to must be distinct size bins below {sizes}")));
    }
    run.arg("from", from);
    run.arg("to", to);
    run.arg("aggregate", aggregate);
    let mut effects = Vec::new();
    for d in &grid.domains {
        effects.push(scale_effect(&grid, d, from, to)?);
    }
    if aggregate {
        let ds = load_primary(run)?;
        let raw = assemble(&ds, &cfg, &cfg.filter)?;
        for d in &grid.domains {
            effects.push(scale_effect_aggregate::<f64>(&raw, d, from, to, &cfg.fit)?);
        }
    }
    let nt = cfg.binning.horizon_bins();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["domain", "variant", "size_lo", "size_hi", "delta"].map(String::from).to_vec();
    header.extend((0..nt).map(|h| format!("diff_h{h}")));
    let enc = |e: csv::Error| CliError::Data(format!("csv encoding: {e}"));
    w.write_record(&header).map_err(enc)?;
    for e in &effects {
        w.write_record(scale_record(e, nt)).map_err(enc)?;
    }
    run.add("scale_effect.csv", w.into_inner().map_err(|e| CliError::Data(e.to_string()))?);
    Ok(())
}

pub fn bootstrap_cmd(run: &mut Run, domains: &[String], methods: &[BootstrapMethod]) -> Result<()> {
    let ds = load_primary(run)?;
    let cfg = run.config().clone();
    let grid = assemble(&ds, &cfg, &cfg.filter)?;
    let domains: Vec<String> = if domains.is_empty() { grid.domains.clone() } else { domains.to_vec() };
    for d in &domains {
        if !grid.domains.contains(d) {
            return Err(CliError::Data(format!("domain {d:?} has no cells in the grid")));
        }
    }
    run.arg("domains", domains.join(","));
    run.arg("methods", methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","));
    let mut rows = Vec::new();
    for d in &domains {
        for &method in methods {
            let bcfg = marketcal::resample::BootstrapConfig { method, ..cfg.bootstrap };
            let est = bootstrap_scale_effect_between(
                &grid,
                d,
                cfg.binning.horizon_bins(),
                marketcal::ingest::SINGLE,
                cfg.binning.size_bins() - 1,
                &bcfg,
                &cfg.fit,
            )?;
            if est.failed_replicates > 0 {
                run.warn(format!("{d} {}: {} replicates failed", method.as_str(), est.failed_replicates));
            }
            rows.push(BootstrapRow::new(d, &bcfg, &est));
        }
    }
    run.add_csv("bootstrap.csv", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct ChainRow {
    chain: usize,
    step_size: f64,
    divergences: usize,
    mean_accept: f64,
    mean_leapfrog: f64,
    max_tree_depth: usize,
}

fn model_for(run: &Run, grid: &SlopeGrid<f64>) -> Result<HierarchicalModel<f64>> {
    Ok(HierarchicalModel::new(run.config().bayes.model.clone(), grid)?)
}

pub fn bayes_cmd(run: &mut Run, cells: &Path) -> Result<()> {
    let (grid, _) = cells_input(run, cells)?;
    let model = model_for(run, &grid)?;
    let sampler = run.config().bayes.sampler;
    let draws = bayes::sample(&model, &sampler)?;
    let diag = diagnose(&draws)?;
    let summary = summarize(&draws);
    let freq = fit_sequential(&grid)?;
    let alpha = compare_alpha(&summary, &freq)?;
    if draws.high_divergence {
        run.warn(format!(
            "{} of {} transitions diverged, above {}%; treat the posterior with caution",
            draws.divergences,
            draws.total_draws(),
            bayes::DIVERGENCE_WARNING_FRACTION * 100.0
        ));
    } else if draws.divergences > 0 {
        run.warn(format!("{} of {} transitions diverged", draws.divergences, draws.total_draws()));
    }
    if diag.max_rhat.is_some_and(|r| r >= 1.01) {
        run.warn(format!("max split R-hat {:.4} is not below 1.01", diag.max_rhat.unwrap_or(f64::NAN)));
    }
    let chains: Vec<ChainRow> = draws
        .chains
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let n = ch.stats.len().max(1) as f64;
            ChainRow {
                chain: c,
                step_size: ch.step_size,
                divergences: ch.stats.iter().filter(|s| s.divergent).count(),
                mean_accept: ch.stats.iter().map(|s| s.accept_stat).sum::<f64>() / n,
                mean_leapfrog: ch.stats.iter().map(|s| s.n_leapfrog as f64).sum::<f64>() / n,
                max_tree_depth: ch.stats.iter().map(|s| s.tree_depth).max().unwrap_or(0),
            }
        })
        .collect();
    run.add("draws.csv", draws_csv(&draws));
    run.add("diagnostics.csv", diag.to_csv());
    run.add_csv("posterior.csv", &summary)?;
    run.add_csv("alpha_compare.csv", &alpha)?;
    run.add_csv("sampler.csv", &chains)?;
    Ok(())
}

#[derive(Serialize)]
struct CoverageRow {
    domain: String,
    within: usize,
    cells: usize,
    coverage: f64,
}

pub fn ppc_cmd(run: &mut Run, cells: &Path, draws_path: &Path) -> Result<()> {
    let (grid, _) = cells_input(run, cells)?;
    let model = model_for(run, &grid)?;
    run.input(draws_path)?;
    run.arg("draws", draws_path.display());
    let draws = read_draws(draws_path, &model.param_names())?;
    let res = posterior_predictive(&draws, &model, &grid, run.config().seed)?;
    let mut summary: Vec<CoverageRow> = res
        .domains
        .iter()
        .map(|d| CoverageRow { domain: d.domain.clone(), within: d.within, cells: d.cells, coverage: d.coverage })
        .collect();
    summary.push(CoverageRow { domain: "all".into(), within: res.within, cells: res.cells.len(), coverage: res.coverage });
    let outside = res.cells.len() - res.within;
    if outside > 0 {
        run.warn(format!("{outside} of {} cells lie outside their 95% predictive interval", res.cells.len()));
    }
    run.add_csv("ppc.csv", &res.cells)?;
    run.add_csv("ppc_summary.csv", &summary)?;
    Ok(())
}

/// Accepts an index or one of `labels`.
pub fn parse_bin(s: &str, labels: &[&str], what: &str) -> Result<usize> {
    if let Ok(i) = s.parse::<usize>() {
        return Ok(i);
    }
    labels
        .iter()
        .position(|l| l.eq_ignore_ascii_case(s))
        .ok_or_else(|| CliError::Config(format!("unknown {what} {s:?}; use an index or one of {}", labels.join(", "))))
}

/// Slope of one fitted cell from a `cells.csv` matrix.
pub fn lookup_slope(rows: &[CellRow], domain: &str, horizon: &str, size: &str) -> Result<f64> {
    let h = parse_bin(horizon, &HORIZON_LABELS, "horizon")?;
    let s = parse_bin(size, &SIZE_LABELS, "size")?;
    let row = rows
        .iter()
        .find(|r| r.domain == domain && r.horizon_bin == h && r.size_bin == s)
        .ok_or_else(|| CliError::Data(format!("no cell ({domain}, {h}, {s}) in the matrix")))?;
    match (row.status.as_str(), row.b) {
        (STATUS_OK, Some(b)) => Ok(b),
        _ => Err(CliError::Data(format!("cell ({domain}, {h}, {s}) has no fitted slope ({})", row.status))),
    }
}

#[derive(Serialize)]
struct RecalRow<'a> {
    domain: &'a str,
    horizon_bin: usize,
    size_bin: usize,
    slope: f64,
    price: f64,
    recalibrated: f64,
}

/// Recalibrated prices from 1 to 99 cents for every fitted cell.
pub fn recalibration_table(run: &mut Run, cells: &Path) -> Result<()> {
    let (_, rows) = cells_input(run, cells)?;
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.status == STATUS_OK) {
        let Some(b) = r.b else { continue };
        for c in PRICE_CENTS {
            let p = f64::from(c) / 100.0;
            out.push(RecalRow {
                domain: &r.domain,
                horizon_bin: r.horizon_bin,
                size_bin: r.size_bin,
                slope: b,
                price: p,
                recalibrated: recalibrate(p, b)?,
            });
        }
    }
    let bytes = csv_bytes(&out)?;
    run.add("recalibration.csv", bytes);
    Ok(())
}

#[derive(Serialize)]
struct TruthRow<'a> {
    domain: &'a str,
    horizon_bin: usize,
    size_bin: usize,
    theta: f64,
}

pub fn synth_cmd(run: &mut Run, spec_path: &Path, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", spec_path.display())))?;
    let mut spec: SynthSpec = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", spec_path.display(), e.message().trim())))?;
    run.input(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    run.arg("spec_seed", spec.seed);
    let cfg = run.config().clone();
    if let Err(e) = spec.check_filters(&cfg.filter) {
        run.warn(format!("generated data will not survive the configured filters: {e}"));
    }
    if spec.bins != cfg.binning {
        run.warn("the synth file's binning differs from the configured [binning]");
    }
    let out = generate(&spec)?;
    for w in &out.warnings {
        run.warn(w.clone());
    }
    let mut trades = Vec::new();
    marketcal::ingest::write_trades_csv(&mut trades, &out.trades)?;
    let mut markets = Vec::new();
    marketcal::ingest::write_markets_csv(&mut markets, &out.markets)?;
    let (nt, ns) = (spec.horizons(), spec.sizes());
    let truth: Vec<TruthRow> = out
        .theta
        .iter()
        .enumerate()
        .map(|(i, &theta)| TruthRow { domain: &spec.domains[i / (nt * ns)], horizon_bin: (i / ns) % nt, size_bin: i % ns, theta })
        .collect();
    run.add("trades.csv", trades);
    run.add("markets.csv", markets);
    run.add("rules.csv", out.rules.to_csv());
    run.add_csv("truth_cells.csv", &truth)?;
    run.add_csv("truth_components.csv", &component_rows(&out.components))?;
    Ok(())
}

fn horizon_table(run: &mut Run, ds: &Dataset, label: &str) -> Result<HorizonSlopeTable<f64>> {
    let cfg = run.config().clone();
    let grid = assemble(ds, &cfg, &cfg.filter)?;
    let mut table = HorizonSlopeTable::default();
    for (d, h, fit) in horizon_slopes::<f64>(&grid, cfg.binning.horizon_bins(), &pooled_fit(&cfg)) {
        match fit {
            Ok(f) => table.insert(&d, h, f.b, f.n as u64),
            Err(e) => run.warn(format!("platform {label}: ({d}, {h}) not fitted: {e}")),
        }
    }
    Ok(table)
}

pub fn compare_platforms(run: &mut Run) -> Result<()> {
    let a = load_primary(run)?;
    let cfg = run.config().clone();
    let b_input: InputPaths = cfg.compare.input.clone();
    let fallback: Option<PathBuf> = cfg.input.rules.clone();
    let b = load_dataset(run, &b_input, "compare.input", fallback.as_deref())?;
    let ta = horizon_table(run, &a, "a")?;
    let tb = horizon_table(run, &b, "b")?;
    let cmp = platform_delta(&ta, &tb, &cfg.compare.reliable_bins)?;
    run.add_csv("compare.csv", &cmp.rows)?;
    run.add_csv("compare_means.csv", &cmp.means)?;
    Ok(())
}

#[derive(Serialize)]
struct RobustRow {
    price_min: u8,
    price_max: u8,
    regularization_c: f64,
    cells: usize,
    mu_r2: Option<f64>,
    alpha_r2: Option<f64>,
    beta_r2: Option<f64>,
    gamma_r2: Option<f64>,
    total_r2: Option<f64>,
    status: String,
}

pub fn robustness(run: &mut Run) -> Result<()> {
    let ds = load_primary(run)?;
    let cfg = run.config().clone();
    let domains = matrix_domains(&ds.rules, &cfg.filter);
    let mut rows = Vec::new();
    for (lo, hi) in ROBUSTNESS_PRICE_RANGES {
        let filter = marketcal::ingest::FilterConfig { price_min: lo, price_max: hi, ..cfg.filter.clone() };
        let grid = assemble(&ds, &cfg, &filter)?;
        for c in ROBUSTNESS_C {
            let fit = FitConfig { regularization_c: c, ..cfg.fit };
            let slopes = slope_grid(domains.clone(), &cfg, &grid, &fit);
            let cells = slopes.cells.iter().filter(|c| c.is_some()).count();
            let mut row = RobustRow {
                price_min: lo,
                price_max: hi,
                regularization_c: c,
                cells,
                mu_r2: None,
                alpha_r2: None,
                beta_r2: None,
                gamma_r2: None,
                total_r2: None,
                status: STATUS_OK.into(),
            };
            match decompose(&slopes) {
                Ok((_, v, _)) => {
                    let r2: Vec<f64> = v.rows.iter().map(|r| r.marginal_r2).collect();
                    row.mu_r2 = r2.first().copied();
                    row.alpha_r2 = r2.get(1).copied();
                    row.beta_r2 = r2.get(2).copied();
                    row.gamma_r2 = r2.get(3).copied();
                    row.total_r2 = Some(v.total_r2);
                }
                Err(e) => {
                    run.warn(format!("price [{lo}, {hi}], C = {c}: {e}"));
                    row.status = format!("failed: {e}");
                }
            }
            rows.push(row);
        }
    }
    if rows.iter().all(|r| r.total_r2.is_none()) {
        return Err(CliError::Data("no setting of the robustness sweep could be decomposed".into()));
    }
    run.add_csv("robustness.csv", &rows)?;
    Ok(())
}

/// Parses `cell_level`, `market_clustered` or `both`.
pub fn parse_methods(s: &str) -> Result<Vec<BootstrapMethod>> {
    if s == "both" {
        return Ok(vec![BootstrapMethod::CellLevel, BootstrapMethod::MarketClustered]);
    }
    s.parse::<BootstrapMethod>().map(|m| vec![m]).map_err(CliError::Config)
}

pub fn parse_scheme(s: &str) -> Result<WeightScheme> {
    s.parse().map_err(CliError::Config)
}

/// Flags for a dataset override the matching config entries.
pub fn override_input(input: &mut InputPaths, trades: Option<PathBuf>, markets: Option<PathBuf>, rules: Option<PathBuf>) {
    if trades.is_some() {
        input.trades = trades;
    }
    if markets.is_some() {
        input.markets = markets;
    }
    if rules.is_some() {
        input.rules = rules;
    }
}

pub fn default_artifact(cfg: &PipelineConfig, flag: Option<PathBuf>, name: &str) -> PathBuf {
    flag.unwrap_or_else(|| cfg.output_dir.join(name))
}
