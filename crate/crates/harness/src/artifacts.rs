//! Artifact directory: CSV/JSON writers and the checksummed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uqdyn::csvio::{fmt_f64, write_csv};
use uqdyn::dynmodels::TimeGrid;

use crate::error::{Context, HarnessError};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub size: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub surrogate: String,
    pub trace_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    /// Some validation forecasts diverged; see `failures`.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    /// SHA-256 of the resolved configuration in `config.json`.
    pub config_hash: String,
    pub status: RunStatus,
    pub failures: Vec<Failure>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes files below one root directory and remembers each of them for the
/// manifest. All writes of a run go through a single writer.
pub struct ArtifactWriter {
    root: PathBuf,
    files: Vec<String>,
}

impl ArtifactWriter {
    pub fn create(root: &Path) -> Result<Self, HarnessError> {
        fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
        Ok(ArtifactWriter { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn target(&mut self, rel: &str) -> Result<PathBuf, HarnessError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        self.files.push(rel.to_string());
        Ok(path)
    }

    pub fn text(&mut self, rel: &str, content: &str) -> Result<(), HarnessError> {
        let path = self.target(rel)?;
        fs::write(&path, content).map_err(|e| HarnessError::io(&path, e))
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Io {
            path: rel.to_string(),
            source: std::io::Error::other(e),
        })?;
        self.text(rel, &(text + "\n"))
    }

    pub fn csv<R, I>(&mut self, rel: &str, header: &[&str], rows: I) -> Result<(), HarnessError>
    where
        R: IntoIterator<Item = String>,
        I: IntoIterator<Item = R>,
    {
        let path = self.target(rel)?;
        write_csv(&path, header, rows).stage(rel)
    }

    /// Trajectory table `t,trace_id,value`.
    pub fn trajectories(
        &mut self,
        rel: &str,
        times: &[f64],
        traces: &[(usize, &[f64])],
    ) -> Result<(), HarnessError> {
        let rows = traces.iter().flat_map(|(id, values)| {
            times.iter().zip(values.iter()).map(move |(t, v)| vec![fmt_f64(*t), id.to_string(), fmt_f64(*v)])
        });
        self.csv(rel, &["t", "trace_id", "value"], rows)
    }

    pub fn grid_trajectories(&mut self, rel: &str, grid: TimeGrid, traces: &[(usize, &[f64])]) -> Result<(), HarnessError> {
        self.trajectories(rel, &grid.times(), traces)
    }

    /// Registers the single file that `f` writes at `rel`.
    pub fn file<F>(&mut self, rel: &str, f: F) -> Result<(), HarnessError>
    where
        F: FnOnce(&Path) -> uqdyn::Result<()>,
    {
        let path = self.target(rel)?;
        f(&path).stage(rel)
    }

    /// Registers every file written by `f` into the directory `rel`.
    pub fn directory<F>(&mut self, rel: &str, f: F) -> Result<(), HarnessError>
    where
        F: FnOnce(&Path) -> uqdyn::Result<()>,
    {
        let dir = self.root.join(rel);
        f(&dir).stage(rel)?;
        let mut found = Vec::new();
        collect_files(&dir, &mut found).map_err(|e| HarnessError::io(&dir, e))?;
        for path in found {
            let rel = path.strip_prefix(&self.root).expect("inside the artifact root");
            self.files.push(rel_string(rel));
        }
        Ok(())
    }

    /// Writes the manifest listing every file with its size and checksum.
    pub fn finish(
        mut self,
        kind: &str,
        seed: u64,
        config_hash: String,
        failures: Vec<Failure>,
    ) -> Result<Manifest, HarnessError> {
        self.files.sort();
        self.files.dedup();
        let files = self
            .files
            .iter()
            .map(|rel| entry(&self.root, rel))
            .collect::<Result<Vec<_>, _>>()?;
        let status = if failures.is_empty() { RunStatus::Complete } else { RunStatus::Partial };
        let manifest = Manifest { kind: kind.to_string(), seed, config_hash, status, failures, files };
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        Ok(manifest)
    }
}

fn rel_string(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn entry(root: &Path, rel: &str) -> Result<FileEntry, HarnessError> {
    let path = root.join(rel);
    let bytes = fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
    Ok(FileEntry { path: rel.to_string(), size: bytes.len() as u64, sha256: sha256_hex(&bytes) })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, HarnessError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Verify(format!("{}: {e}", path.display())))
}

/// Re-hashes every listed file; returns the paths that are missing or
/// differ from the manifest.
pub fn verify(dir: &Path, manifest: &Manifest) -> Vec<String> {
    manifest
        .files
        .iter()
        .filter(|f| entry(dir, &f.path).map_or(true, |e| e != **f))
        .map(|f| f.path.clone())
        .collect()
}
