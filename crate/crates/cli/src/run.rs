//! Run-stamped output directories and their input manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use personkg_core::sha256_hex;
use serde::Serialize;

/// Content hash of a file, or of every file below a directory (relative
/// path and content, sorted by path).
pub fn hash_input(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        let mut acc = String::new();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            let bytes = fs::read(&f).with_context(|| f.display().to_string())?;
            acc.push_str(&format!(
                "{}\0{}\n",
                rel.to_string_lossy(),
                sha256_hex(bytes)
            ));
        }
        Ok(sha256_hex(acc))
    } else {
        let bytes = fs::read(path).with_context(|| path.display().to_string())?;
        Ok(sha256_hex(bytes))
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| dir.display().to_string())? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Everything that determines a run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub settings: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            settings: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let hash = hash_input(path)?;
        self.inputs
            .insert(path.to_string_lossy().into_owned(), hash);
        Ok(self)
    }

    /// Short stamp over command, seed, settings and input hashes.
    pub fn stamp(&self) -> String {
        let mut acc = format!("{}\0{}\n", self.command, self.seed);
        for (k, v) in self.settings.iter().chain(&self.inputs) {
            acc.push_str(&format!("{k}\0{v}\n"));
        }
        sha256_hex(acc)[..12].to_string()
    }
}

/// An output directory being filled by one subcommand.
pub struct RunDir {
    pub path: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// `explicit` wins; otherwise `<parent>/<command>-<stamp>`.
    pub fn create(manifest: RunManifest, parent: &Path, explicit: Option<&Path>) -> Result<Self> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => parent.join(format!("{}-{}", manifest.command, manifest.stamp())),
        };
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(RunDir { path, manifest })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.file(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.record(name);
        Ok(path)
    }

    /// Notes a file written by other means.
    pub fn record(&mut self, name: &str) {
        self.manifest.outputs.push(name.to_string());
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.outputs.sort();
        self.manifest.outputs.dedup();
        let json = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.path.join("manifest.json"), json)?;
        Ok(self.path)
    }
}
