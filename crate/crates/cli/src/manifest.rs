//! Output staging and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use factlab::io::{sha256_file, sha256_hex, write_atomic};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{fail, EXIT_USAGE};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_at: String,
    pub duration_seconds: f64,
}

/// Collects inputs and outputs of one command, then writes the outputs and
/// the manifest in one go.
pub struct Session {
    command: String,
    out_dir: PathBuf,
    force: bool,
    started: Instant,
    started_at: chrono::DateTime<chrono::Utc>,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, Vec<u8>>,
    volatile: std::collections::BTreeSet<String>,
}

impl Session {
    pub fn new(command: &str, out_dir: &Path, force: bool) -> Self {
        Session {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            force,
            started: Instant::now(),
            started_at: chrono::Utc::now(),
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            volatile: Default::default(),
        }
    }

    /// Records an input file's hash.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn config<T: Serialize>(&mut self, value: &T) {
        self.config = serde_json::to_value(value).expect("config serializes");
    }

    pub fn output(&mut self, rel: impl Into<String>, bytes: Vec<u8>) {
        self.outputs.insert(rel.into(), bytes);
    }

    /// An output that legitimately differs between runs, such as timings;
    /// it is replaced without `--force`.
    pub fn volatile(&mut self, rel: impl Into<String>, bytes: Vec<u8>) {
        let rel = rel.into();
        self.volatile.insert(rel.clone());
        self.outputs.insert(rel, bytes);
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, rel: impl Into<String>, value: &T) {
        let mut v = serde_json::to_vec_pretty(value).expect("output serializes");
        v.push(b'\n');
        self.output(rel, v);
    }

    /// Writes all outputs unless one would replace a differing file without
    /// `--force`. Nothing is written in that case.
    pub fn commit(self) -> Result<RunManifest> {
        for (rel, bytes) in &self.outputs {
            let path = self.out_dir.join(rel);
            if path.exists() && !self.force && !self.volatile.contains(rel) {
                let existing = std::fs::read(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                if existing != *bytes {
                    return Err(fail(
                        EXIT_USAGE,
                        format!("{} exists with different content; pass --force to overwrite", path.display()),
                    ));
                }
            }
        }
        let mut hashes = BTreeMap::new();
        for (rel, bytes) in &self.outputs {
            write_atomic(&self.out_dir.join(rel), bytes)?;
            hashes.insert(rel.clone(), sha256_hex(bytes));
        }
        let suffix: u32 = rand::rng().random();
        let run_id = format!("{}-{suffix:08x}", self.started_at.format("%Y%m%dT%H%M%S%.3fZ"));
        let manifest = RunManifest {
            run_id: run_id.clone(),
            command: self.command,
            argv: std::env::args().collect(),
            config: self.config,
            inputs: self.inputs,
            outputs: hashes,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at.to_rfc3339(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out_dir.join("manifests").join(format!("{run_id}.json"));
        factlab::io::write_json(&path, &manifest)?;
        log::info!("wrote {} outputs, manifest {}", manifest.outputs.len(), path.display());
        Ok(manifest)
    }
}
