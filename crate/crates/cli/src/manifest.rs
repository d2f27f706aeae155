//! Run manifest: what was run, with which settings, on which bytes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use nlnr::error::Result;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    /// First 64 bits of the SHA-256 of the canonical config JSON.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
    pub wall_seconds: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

/// Hash of a JSON value with object keys sorted at every level, so the
/// digest ignores field order in the source config.
pub fn config_hash(v: &Value) -> String {
    let canonical = canonicalize(v).to_string();
    hex(&Sha256::digest(canonical.as_bytes())[..8])
}

fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = serde_json::Map::new();
            for k in keys {
                out.insert(k.clone(), canonicalize(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

impl Manifest {
    pub fn new(command: &str, argv: Vec<String>, config: Value) -> Self {
        Self {
            command: command.to_string(),
            argv,
            config_hash: config_hash(&config),
            config,
            seed: None,
            version: format!("nlnr {}", env!("CARGO_PKG_VERSION")),
            threads: 0,
            wall_seconds: 0.0,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn inputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            self.inputs.push(FileDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            });
        }
        Ok(())
    }

    pub fn finish(&mut self, outputs: &[PathBuf]) -> Result<()> {
        self.config_hash = config_hash(&self.config);
        for p in outputs {
            self.outputs.push(FileDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            });
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
