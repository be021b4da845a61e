//! Output files, the manifest and its verification.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stablesde::stats::sha256_hex;

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

/// Collects output files and writes them with a manifest.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|f| f.0.as_str()).collect()
    }

    pub fn write(self, dir: &Path, config_hash: &str, seed: u64) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut entries = Vec::new();
        for (name, bytes) in self.files {
            let path = dir.join(&name);
            fs::write(&path, &bytes)?;
            entries.push(FileEntry { path: name, sha256: sha256_hex(&bytes) });
            written.push(path);
        }
        let manifest = Manifest { config_hash: config_hash.to_string(), seed, files: entries };
        let path = dir.join(MANIFEST);
        fs::write(&path, to_json_bytes(&manifest))?;
        written.push(path);
        Ok(written)
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
    bytes.push(b'\n');
    bytes
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub checked: usize,
    pub mismatched: Vec<String>,
    pub missing: Vec<String>,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.mismatched.is_empty() && self.missing.is_empty()
    }
}

/// Recomputes every file hash listed in `dir/manifest.json` and checks
/// that JSON summaries carry the manifest's config hash and seed.
pub fn verify(dir: &Path) -> Result<Verification, CliError> {
    let text = fs::read(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    let mut v = Verification { checked: 0, mismatched: Vec::new(), missing: Vec::new() };
    for entry in &manifest.files {
        let Ok(bytes) = fs::read(dir.join(&entry.path)) else {
            v.missing.push(entry.path.clone());
            continue;
        };
        v.checked += 1;
        let mut good = sha256_hex(&bytes) == entry.sha256;
        if good && entry.path.ends_with(".json") {
            let doc: serde_json::Value = serde_json::from_slice(&bytes)?;
            if let Some(h) = doc.get("config_hash") {
                good &= h == &serde_json::Value::from(manifest.config_hash.clone());
            }
            if let Some(s) = doc.get("seed") {
                good &= s == &serde_json::Value::from(manifest.seed);
            }
        }
        if !good {
            v.mismatched.push(entry.path.clone());
        }
    }
    Ok(v)
}
