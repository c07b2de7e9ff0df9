//! Run manifests: enough metadata to reproduce every output file.

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub command: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    /// Resolved parameters of the run.
    pub config: Value,
    /// SHA-256 of the canonical JSON encoding of `config`.
    pub config_hash: String,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Canonical JSON: object keys sorted, no whitespace.
pub fn canonical_json(value: &Value) -> String {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!(
            "[{}]",
            items
                .iter()
                .map(canonical_json)
                .collect::<Vec<_>>()
                .join(",")
        ),
        other => other.to_string(),
    }
}

/// Collects output files of one run and writes `manifest.json` next to them.
pub struct RunRecord {
    out_dir: PathBuf,
    files: Vec<PathBuf>,
}

impl RunRecord {
    pub fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Registers a written file.
    pub fn add(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    pub fn finish(self, seed: u64, config: Value) -> Result<PathBuf> {
        let mut outputs = Vec::new();
        for file in &self.files {
            let bytes =
                fs::read(file).with_context(|| format!("cannot read back {}", file.display()))?;
            let rel = file.strip_prefix(&self.out_dir).unwrap_or(file);
            outputs.push(OutputFile {
                path: rel.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: cusp_core::VERSION,
            command: std::env::args().collect(),
            seed,
            threads: rayon::current_num_threads(),
            config_hash: sha256_hex(canonical_json(&config).as_bytes()),
            config,
            outputs,
        };
        let path = self.out_dir.join("manifest.json");
        cusp_core::io::write_json(&path, &manifest)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_json_ignores_key_order() {
        let a = json!({"b": 1, "a": {"y": [1, 2], "x": "s"}});
        let b = json!({"a": {"x": "s", "y": [1, 2]}, "b": 1});
        assert_eq!(canonical_json(&a), canonical_json(&b));
        assert_eq!(canonical_json(&a), r#"{"a":{"x":"s","y":[1,2]},"b":1}"#);
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
