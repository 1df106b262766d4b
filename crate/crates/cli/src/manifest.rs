//! Provenance attached to every output artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved options (config file merged, flags applied).
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    /// Input path -> sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub timestamp: String,
    pub version: String,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>, backend: Option<&str>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        // serde_json maps are sorted, so this serialization is canonical
        let config_hash = sha256_hex(serde_json::to_string(&config)?.as_bytes());
        Ok(RunManifest {
            command: command.to_string(),
            config,
            config_hash,
            seed,
            backend: backend.map(str::to_string),
            inputs: BTreeMap::new(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    /// Adds the file behind a `toy:PATH` backend descriptor and its vocabulary.
    pub fn add_backend_inputs(&mut self, spec: &str) -> Result<()> {
        if let Some(path) = spec.strip_prefix("toy:") {
            self.add_input(Path::new(path))?;
            let vocab = crate::backend::vocab_path(Path::new(path));
            if vocab.exists() {
                self.add_input(&vocab)?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WithManifest<'a, T: Serialize> {
    manifest: &'a RunManifest,
    result: &'a T,
}

/// Writes `{"manifest": …, "result": …}` as pretty JSON.
pub fn write_report<T: Serialize>(path: &Path, manifest: &RunManifest, result: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&WithManifest { manifest, result })?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// For artifacts that cannot hold JSON (model files, JSONL, CSV).
pub fn write_sidecar(path: &Path, manifest: &RunManifest) -> Result<()> {
    let p = sidecar_path(path);
    std::fs::write(&p, serde_json::to_string_pretty(manifest)? + "\n").with_context(|| format!("writing {}", p.display()))
}
