use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory that remembers what was written, for the manifest.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root, written: Vec::new() })
    }

    /// Path for `name`, recorded as an output.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn csv(&mut self, name: &str) -> Result<csv::Writer<fs::File>> {
        let path = self.file(name);
        csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.file(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Write `<command>.manifest.json`: command, seed, threads, versions and hashes of
    /// the config, the inputs and every output. No timestamps, so identical
    /// runs give identical manifests.
    pub fn finish(mut self, manifest: Manifest) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for name in std::mem::take(&mut self.written) {
            let bytes = fs::read(self.root.join(&name)).with_context(|| format!("reading back {name}"))?;
            outputs.insert(name, sha256_hex(&bytes));
        }
        let path = self.root.join(format!("{}.manifest.json", manifest.command));
        let full = ManifestFile { manifest, outputs };
        fs::write(&path, serde_json::to_string_pretty(&full)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct ManifestFile {
    #[serde(flatten)]
    manifest: Manifest,
    outputs: BTreeMap<String, String>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

/// Number formatting for CSV cells: empty for missing values.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
