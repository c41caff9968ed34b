//! The declarative pipeline configuration.

use std::fs;
use std::path::{Path, PathBuf};

use marketcal::bayes::{BayesModelSpec, SamplerConfig};
use marketcal::calib::{FitConfig, WeightScheme};
use marketcal::decomp::DEFAULT_RELIABLE_BINS;
use marketcal::ingest::{BinningConfig, FilterConfig, InputFormat};
use marketcal::resample::BootstrapConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One dataset: trade and market files plus the domain rules that classify them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub trades: Option<PathBuf>,
    pub markets: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub format: InputFormat,
}

impl Default for InputPaths {
    fn default() -> Self {
        InputPaths { trades: None, markets: None, rules: None, format: InputFormat::Csv }
    }
}

impl InputPaths {
    fn paths_mut(&mut self) -> [(&'static str, &mut Option<PathBuf>); 3] {
        [("trades", &mut self.trades), ("markets", &mut self.markets), ("rules", &mut self.rules)]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesSettings {
    pub sampler: SamplerConfig,
    pub model: BayesModelSpec,
}

/// The second platform for `compare-platforms`; rules default to the primary ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSettings {
    pub input: InputPaths,
    /// Horizon bins trusted on both platforms.
    pub reliable_bins: Vec<usize>,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings { input: InputPaths::default(), reliable_bins: DEFAULT_RELIABLE_BINS.to_vec() }
    }
}

/// Every setting of a run. The top-level `seed` is copied into the bootstrap
/// and sampler sections when the configuration is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Weighting of the pooled per-(domain, horizon) slopes; cell fits use `[fit]`.
    pub pooled_weight_scheme: WeightScheme,
    pub input: InputPaths,
    pub filter: FilterConfig,
    pub binning: BinningConfig,
    pub fit: FitConfig,
    pub bootstrap: BootstrapConfig,
    pub bayes: BayesSettings,
    pub compare: CompareSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("out"),
            seed: 0,
            pooled_weight_scheme: WeightScheme::Contract,
            input: InputPaths::default(),
            filter: FilterConfig::default(),
            binning: BinningConfig::default(),
            fit: FitConfig::default(),
            bootstrap: BootstrapConfig::default(),
            bayes: BayesSettings::default(),
            compare: CompareSettings::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths are taken from the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message().trim())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        rebase(base, &mut cfg.output_dir);
        for input in [&mut cfg.input, &mut cfg.compare.input] {
            for (_, p) in input.paths_mut() {
                if let Some(p) = p {
                    rebase(base, p);
                }
            }
        }
        Ok(cfg)
    }

    /// Propagates the run seed and checks every section and referenced file.
    pub fn resolve(self) -> Result<Self> {
        self.resolve_for(true)
    }

    /// As [`resolve`](Self::resolve); input files are only required to exist
    /// when `reads_inputs`, so commands that create them can share the config.
    pub fn resolve_for(mut self, reads_inputs: bool) -> Result<Self> {
        self.bootstrap.seed = self.seed;
        self.bayes.sampler.seed = self.seed;
        let cfg_err = |section: &str, e: &dyn std::fmt::Display| CliError::Config(format!("[{section}] {e}"));
        self.filter.validate().map_err(|e| cfg_err("filter", &e))?;
        self.binning.validate().map_err(|e| cfg_err("binning", &e))?;
        self.fit.validate().map_err(|e| cfg_err("fit", &e))?;
        self.bootstrap.validate().map_err(|e| cfg_err("bootstrap", &e))?;
        self.bayes.sampler.validate().map_err(|e| cfg_err("bayes.sampler", &e))?;
        self.bayes.model.validate().map_err(|e| cfg_err("bayes.model", &e))?;
        if self.bayes.model.centred_log_sizes.len() != self.binning.size_bins() {
            return Err(CliError::Config(format!(
                "[bayes.model] centred_log_sizes has {} entries but [binning] defines {} size bins",
                self.bayes.model.centred_log_sizes.len(),
                self.binning.size_bins()
            )));
        }
        let horizons = self.binning.horizon_bins();
        if let Some(&h) = self.compare.reliable_bins.iter().find(|&&h| h >= horizons) {
            return Err(CliError::Config(format!("[compare] reliable_bins: bin {h} is outside 0..{horizons}")));
        }
        if let Some(mask) = &self.filter.reliable_horizon_mask {
            if let Some(&h) = mask.iter().find(|&&h| h >= horizons) {
                return Err(CliError::Config(format!("[filter] reliable_horizon_mask: bin {h} is outside 0..{horizons}")));
            }
        }
        let inputs = if reads_inputs { vec![("input", &mut self.input), ("compare.input", &mut self.compare.input)] } else { Vec::new() };
        for (section, input) in inputs {
            for (key, p) in input.paths_mut() {
                if let Some(p) = p {
                    if !p.is_file() {
                        return Err(CliError::Config(format!("[{section}] {key}: no such file {}", p.display())));
                    }
                }
            }
        }
        Ok(self)
    }

    /// The resolved configuration in canonical TOML; the manifest hashes this text.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }
}

/// Fetches a required input path with a field-level message.
pub fn require<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("{field} is required by this command")))
}
