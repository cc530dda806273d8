//! Run manifests: every command emits one, with digests of its inputs and
//! outputs so stage chains can be verified.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub backend: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, u128>,
    pub models: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("digesting {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
    last_mark: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config_path: Option<&Path>, seed: u64, backend: &str) -> Result<Self> {
        let config_hash = match config_path {
            Some(p) => sha256_file(p)?,
            None => String::new(),
        };
        let now = Instant::now();
        Ok(Self {
            manifest: RunManifest {
                command: command.to_string(),
                config_hash,
                seed,
                backend: backend.to_string(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                timings_ms: BTreeMap::new(),
                models: BTreeMap::new(),
            },
            started: now,
            last_mark: now,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.manifest.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn model(&mut self, role: &str, tag: &str) {
        self.manifest.models.insert(role.to_string(), tag.to_string());
    }

    /// Record the wall time since the previous mark under `stage`.
    pub fn mark(&mut self, stage: &str) {
        let now = Instant::now();
        self.manifest.timings_ms.insert(stage.to_string(), (now - self.last_mark).as_millis());
        self.last_mark = now;
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.manifest
            .timings_ms
            .insert("total".into(), self.started.elapsed().as_millis());
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(path, json)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}
