//! Artifacts are staged in memory, written to a scratch directory, then renamed
//! into the output directory together. A failed run leaves nothing behind.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path.display(), e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// CSV text of serializable rows, header included.
pub fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(format!("csv encoding: {e}")))?;
    }
    w.into_inner().map_err(|e| CliError::Data(format!("csv encoding: {e}")))
}

/// One command invocation and everything it will write.
pub struct Run {
    command: &'static str,
    config: PipelineConfig,
    arguments: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    artifacts: Vec<(String, Vec<u8>)>,
    warnings: Vec<String>,
}

impl Run {
    pub fn new(command: &'static str, config: PipelineConfig) -> Self {
        Run {
            command,
            config,
            arguments: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) {
        self.arguments.insert(key.to_string(), value.to_string());
    }

    /// Records the digest of a file the run reads.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.artifacts.push((name.to_string(), bytes.into()));
    }

    pub fn add_csv<S: Serialize>(&mut self, name: &str, rows: &[S]) -> Result<()> {
        let bytes = csv_bytes(rows)?;
        self.add(name, bytes);
        Ok(())
    }

    fn entry(&self) -> Value {
        let canonical = self.config.canonical();
        let artifacts: BTreeMap<&str, String> = self.artifacts.iter().map(|(n, b)| (n.as_str(), sha256_hex(b))).collect();
        json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.config.seed,
            "config_sha256": sha256_hex(canonical.as_bytes()),
            "config": canonical,
            "arguments": self.arguments,
            "inputs": self.inputs,
            "artifacts": artifacts,
            "warnings": self.warnings,
        })
    }

    /// Writes every artifact and merges this run into the manifest, which keeps
    /// one entry per command.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let out = self.config.output_dir.clone();
        fs::create_dir_all(&out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
        let mut manifest: BTreeMap<String, Value> = fs::read(out.join(MANIFEST))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        manifest.insert(self.command.to_string(), self.entry());
        let mut files = self.artifacts;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        files.push((MANIFEST.to_string(), text.into_bytes()));

        let staging = out.join(format!(".staging-{}-{}", self.command, std::process::id()));
        let result = stage_and_publish(&staging, &out, &files);
        let _ = fs::remove_dir_all(&staging);
        result
    }
}

fn stage_and_publish(staging: &Path, out: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(staging).map_err(|e| CliError::io(format!("creating {}", staging.display()), e))?;
    for (name, bytes) in files {
        let p = staging.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(format!("writing {}", p.display()), e))?;
    }
    let mut published = Vec::new();
    for (name, _) in files {
        let dest = out.join(name);
        if let Err(e) = fs::rename(staging.join(name), &dest) {
            for p in &published {
                let _ = fs::remove_file(p);
            }
            return Err(CliError::io(format!("moving {}", dest.display()), e));
        }
        published.push(dest);
    }
    Ok(published)
}
