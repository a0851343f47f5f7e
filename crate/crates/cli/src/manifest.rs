//! Reproducibility record written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use eae_model::NliClassifier;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            tool: format!("eae {}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let (sha256, bytes) = hash_path(path)?;
        self.inputs.push(InputRecord {
            role: role.into(),
            path: path.to_path_buf(),
            sha256,
            bytes,
        });
        Ok(())
    }
}

/// SHA-256 of a file, or of the sorted `(relative name, file digest)` list
/// of a directory.
pub fn hash_path(path: &Path) -> Result<(String, u64)> {
    let meta = fs::metadata(path).with_context(|| format!("reading {}", path.display()))?;
    if meta.is_file() {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok((format!("{:x}", Sha256::digest(&data)), data.len() as u64));
    }
    let mut entries = Vec::new();
    collect(path, path, &mut entries)?;
    entries.sort();
    let mut h = Sha256::new();
    let mut total = 0;
    for rel in &entries {
        let (digest, n) = hash_path(&path.join(rel))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(digest.as_bytes());
        total += n;
    }
    Ok((format!("{:x}", h.finalize()), total))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("child of root").to_path_buf());
        }
    }
    Ok(())
}

/// Collects output files in memory and writes them only once the command
/// has fully succeeded, so a failing run leaves nothing behind.
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

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn add(&mut self, name: impl Into<String>, data: impl Into<Vec<u8>>) {
        self.files.push((name.into(), data.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add(name, text);
        Ok(())
    }

    /// Writes every file and checkpoint, then `config.toml` and
    /// `manifest.json`.
    pub fn commit(mut self, mut manifest: Manifest, models: &[(String, &NliClassifier)]) -> Result<()> {
        self.add("config.toml", manifest.config.to_toml()?);
        manifest.outputs = self
            .files
            .iter()
            .map(|(n, _)| n.clone())
            .chain(models.iter().map(|(n, _)| format!("{n}/")))
            .collect();
        manifest.outputs.push("manifest.json".into());
        self.add_json("manifest.json", &manifest)?;
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        for (name, data) in &self.files {
            let path = self.dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, data).with_context(|| format!("writing {}", path.display()))?;
        }
        for (name, model) in models {
            model.save(&self.dir.join(name))?;
        }
        Ok(())
    }
}
