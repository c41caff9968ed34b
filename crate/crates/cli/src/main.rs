//! `marketcal`: the calibration pipeline as composable commands.
//!
//! Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

mod commands;
mod config;
mod data;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands as cmd;
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::output::Run;

#[derive(Parser)]
#[command(name = "marketcal", version, about = "Calibration analysis of prediction-market trades")]
struct Cli {
    /// Pipeline configuration (TOML). Flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed; also replaces the seed of a synth spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct InputArgs {
    #[arg(long)]
    trades: Option<PathBuf>,
    #[arg(long)]
    markets: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct CellsArg {
    /// Calibration matrix written by fit-cells; defaults to `<out>/cells.csv`.
    #[arg(long)]
    cells: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-domain dataset statistics and the ingest ledger.
    IngestStats(InputArgs),
    /// Fits every cell and writes the calibration matrix.
    FitCells {
        #[command(flatten)]
        input: InputArgs,
        /// Penalty constant C.
        #[arg(long)]
        c: Option<f64>,
        /// `trade` or `contract`.
        #[arg(long)]
        weighting: Option<String>,
    },
    /// Components, variance attribution and F-tests of the matrix.
    Decompose(CellsArg),
    /// Within-horizon scale effect of every domain.
    ScaleEffect {
        #[command(flatten)]
        cells: CellsArg,
        #[arg(long, default_value_t = 0)]
        from: usize,
        /// Defaults to the last size bin.
        #[arg(long)]
        to: Option<usize>,
        /// Also refit each size bin pooled over horizons (needs the raw inputs).
        #[arg(long)]
        aggregate: bool,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Bootstrap intervals for the Single-to-Large scale effect.
    Bootstrap {
        #[command(flatten)]
        input: InputArgs,
        /// Restrict to these domains; repeatable.
        #[arg(long)]
        domain: Vec<String>,
        /// `cell_level`, `market_clustered` or `both`; defaults to the config.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Samples the hierarchical model of the matrix.
    Bayes {
        #[command(flatten)]
        cells: CellsArg,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        keep: Option<usize>,
    },
    /// Posterior predictive check of the matrix against saved draws.
    Ppc {
        #[command(flatten)]
        cells: CellsArg,
        /// Defaults to `<out>/draws.csv`.
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Recalibrated prices: one value with `--price`, else a table for every cell.
    Recalibrate {
        #[command(flatten)]
        cells: CellsArg,
        #[arg(long)]
        price: Option<f64>,
        #[arg(long, conflicts_with_all = ["domain", "horizon", "size"])]
        slope: Option<f64>,
        #[arg(long, requires_all = ["horizon", "size", "price"])]
        domain: Option<String>,
        /// Bin index or label such as `2d-1w`.
        #[arg(long, requires = "domain")]
        horizon: Option<String>,
        /// Bin index or label such as `Large`.
        #[arg(long, requires = "domain")]
        size: Option<String>,
    },
    /// Synthetic trades, markets and rules from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Pooled slope differences between two platforms.
    ComparePlatforms {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        trades_b: Option<PathBuf>,
        #[arg(long)]
        markets_b: Option<PathBuf>,
        #[arg(long)]
        rules_b: Option<PathBuf>,
    },
    /// Decomposition under each price range and penalty of the sweep.
    Robustness(InputArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::IngestStats(_) => "ingest-stats",
            Command::FitCells { .. } => "fit-cells",
            Command::Decompose(_) => "decompose",
            Command::ScaleEffect { .. } => "scale-effect",
            Command::Bootstrap { .. } => "bootstrap",
            Command::Bayes { .. } => "bayes",
            Command::Ppc { .. } => "ppc",
            Command::Recalibrate { .. } => "recalibrate",
            Command::Synth { .. } => "synth",
            Command::ComparePlatforms { .. } => "compare-platforms",
            Command::Robustness(_) => "robustness",
        }
    }
}

fn base_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_input(cfg: &mut PipelineConfig, a: &InputArgs) {
    cmd::override_input(&mut cfg.input, a.trades.clone(), a.markets.clone(), a.rules.clone());
}

fn execute(cli: Cli) -> Result<Option<String>> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = base_config(&cli)?;
    let name = cli.command.name();

    // one-shot lookups print a value and write nothing
    if let Command::Recalibrate { cells, price: Some(price), slope, domain, horizon, size } = &cli.command {
        let slope = match (slope, domain) {
            (Some(s), _) => *s,
            (None, Some(d)) => {
                let cfg = cfg.resolve()?;
                let path = cmd::default_artifact(&cfg, cells.cells.clone(), "cells.csv");
                let (_, rows) = data::read_cells(&path, &cfg)?;
                cmd::lookup_slope(&rows, d, horizon.as_deref().unwrap_or(""), size.as_deref().unwrap_or(""))?
            }
            (None, None) => return Err(CliError::Config("--price needs --slope or --domain/--horizon/--size".into())),
        };
        let value = marketcal::calib::recalibrate(*price, slope)?;
        return Ok(Some(format!("{value:.6}")));
    }

    match &cli.command {
        Command::IngestStats(a) | Command::Robustness(a) => apply_input(&mut cfg, a),
        Command::FitCells { input, c, weighting } => {
            apply_input(&mut cfg, input);
            if let Some(c) = c {
                cfg.fit.regularization_c = *c;
            }
            if let Some(w) = weighting {
                cfg.fit.weight_scheme = cmd::parse_scheme(w)?;
            }
        }
        Command::ScaleEffect { input, .. } => apply_input(&mut cfg, input),
        Command::Bootstrap { input, method, replicates, .. } => {
            apply_input(&mut cfg, input);
            if let Some(m) = method.as_deref().filter(|m| *m != "both") {
                cfg.bootstrap.method = m.parse().map_err(CliError::Config)?;
            }
            if let Some(r) = replicates {
                cfg.bootstrap.replicates = *r;
            }
        }
        Command::Bayes { chains, warmup, keep, .. } => {
            let s = &mut cfg.bayes.sampler;
            s.chains = chains.unwrap_or(s.chains);
            s.warmup = warmup.unwrap_or(s.warmup);
            s.keep = keep.unwrap_or(s.keep);
        }
        Command::ComparePlatforms { input, trades_b, markets_b, rules_b } => {
            apply_input(&mut cfg, input);
            cmd::override_input(&mut cfg.compare.input, trades_b.clone(), markets_b.clone(), rules_b.clone());
        }
        _ => {}
    }
    let cfg = cfg.resolve_for(!matches!(cli.command, Command::Synth { .. }))?;
    let mut run = Run::new(name, cfg.clone());
    match &cli.command {
        Command::IngestStats(_) => cmd::ingest_stats(&mut run)?,
        Command::FitCells { .. } => cmd::fit_cells(&mut run)?,
        Command::Decompose(c) => cmd::decompose_cmd(&mut run, &cmd::default_artifact(&cfg, c.cells.clone(), "cells.csv"))?,
        Command::ScaleEffect { cells, from, to, aggregate, .. } => {
            let to = to.unwrap_or(cfg.binning.size_bins() - 1);
            cmd::scale_effect_cmd(&mut run, &cmd::default_artifact(&cfg, cells.cells.clone(), "cells.csv"), *from, to, *aggregate)?
        }
        Command::Bootstrap { domain, method, .. } => {
            let methods = match method {
                Some(m) => cmd::parse_methods(m)?,
                None => vec![cfg.bootstrap.method],
            };
            cmd::bootstrap_cmd(&mut run, domain, &methods)?
        }
        Command::Bayes { cells, .. } => cmd::bayes_cmd(&mut run, &cmd::default_artifact(&cfg, cells.cells.clone(), "cells.csv"))?,
        Command::Ppc { cells, draws } => cmd::ppc_cmd(
            &mut run,
            &cmd::default_artifact(&cfg, cells.cells.clone(), "cells.csv"),
            &cmd::default_artifact(&cfg, draws.clone(), "draws.csv"),
        )?,
        Command::Recalibrate { cells, .. } => {
            cmd::recalibration_table(&mut run, &cmd::default_artifact(&cfg, cells.cells.clone(), "cells.csv"))?
        }
        Command::Synth { spec } => cmd::synth_cmd(&mut run, spec, cli.seed)?,
        Command::ComparePlatforms { .. } => cmd::compare_platforms(&mut run)?,
        Command::Robustness(_) => cmd::robustness(&mut run)?,
    }
    let written = run.commit()?;
    Ok(Some(written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Some(text)) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
