use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use ctfvem::config::PipelineConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub millis: f64,
    /// Digest of the stage's numeric output (little-endian f64 bytes).
    pub sha256: String,
}

/// Record of one command invocation, written as JSON.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub threads: usize,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub stages: Vec<StageRecord>,
    pub total_millis: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn values_digest<I: IntoIterator<Item = f64>>(values: I) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        let config = ctfvem::config::KEYS
            .iter()
            .map(|k| (k.to_string(), cfg.get(k).expect("listed key")))
            .collect();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
            total_millis: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord { path: path.to_path_buf(), sha256: file_digest(path)? });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileRecord { path: path.to_path_buf(), sha256: file_digest(path)? });
        Ok(())
    }

    /// Runs `f`, recording its duration and a digest of the values it yields.
    pub fn stage<T>(
        &mut self,
        name: &str,
        f: impl FnOnce() -> Result<T>,
        digest: impl FnOnce(&T) -> String,
    ) -> Result<T> {
        let t0 = Instant::now();
        let out = f()?;
        let millis = t0.elapsed().as_secs_f64() * 1e3;
        log::info!("{name}: {millis:.1} ms");
        self.stages.push(StageRecord { stage: name.to_string(), millis, sha256: digest(&out) });
        Ok(out)
    }

    pub fn finish(mut self, path: Option<&Path>) -> Result<()> {
        self.total_millis = self.started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
        if let Some(path) = path {
            let text = serde_json::to_string_pretty(&self)?;
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}
