//! Run manifests and the single output writer.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch; omitted in deterministic mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished: Option<u64>,
}

pub fn now(deterministic: bool) -> Option<u64> {
    if deterministic {
        return None;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
}

pub fn hash_file(path: &Path) -> Result<InputFile> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputFile {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Buffers artifacts and writes them all, plus the manifest, at the end.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    /// JSON artifact tagged with the manifest that produced it.
    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let wrapped = serde_json::json!({ "manifest": MANIFEST_FILE, "data": value });
        let mut s = serde_json::to_string_pretty(&wrapped)?;
        s.push('\n');
        self.add(name, s);
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn write(self, mut manifest: RunManifest) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        manifest.outputs = self.names();
        for (name, bytes) in &self.files {
            let p = self.dir.join(name);
            fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        }
        manifest.finished = manifest.started.and(now(false));
        let p = self.dir.join(MANIFEST_FILE);
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }
}
