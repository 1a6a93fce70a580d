//! Per-stage manifests recording what a stage read and wrote, by digest.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use dci_explorer::bundle::{sha256_file, sha256_hex, FileDigest};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const MANIFEST_DIR: &str = "manifests";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub config_digest: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn manifest_path(root: &Path, stage: &str) -> std::path::PathBuf {
    root.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

pub fn read_manifest(root: &Path, stage: &str) -> Option<StageManifest> {
    let bytes = fs::read(manifest_path(root, stage)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

pub fn write_manifest(root: &Path, manifest: &StageManifest) -> Result<()> {
    let path = manifest_path(root, &manifest.stage);
    fs::create_dir_all(path.parent().unwrap())?;
    fs::write(path, serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

/// Digest of a JSON value (serde_json maps are key-sorted, so this is canonical).
pub fn config_digest(value: &serde_json::Value) -> String {
    sha256_hex(&serde_json::to_vec(value).unwrap_or_default())
}

/// Every regular file under `root/dir`, as sorted root-relative `/` paths.
pub fn list_files(root: &Path, dir: &str) -> Result<Vec<String>> {
    fn walk(root: &Path, rel: &str, out: &mut Vec<String>) -> std::io::Result<()> {
        for entry in fs::read_dir(root.join(rel))? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let child = format!("{rel}/{name}");
            if entry.file_type()?.is_dir() {
                walk(root, &child, out)?;
            } else {
                out.push(child);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    if root.join(dir).is_dir() {
        walk(root, dir, &mut out)?;
    }
    out.sort();
    Ok(out)
}

pub fn digest_files(root: &Path, rels: &[String]) -> Result<Vec<FileDigest>> {
    rels.iter()
        .map(|rel| {
            let sha256 = sha256_file(&root.join(rel)).map_err(|e| PipelineError::Missing(format!("{rel}: {e}")))?;
            Ok(FileDigest {
                path: rel.clone(),
                sha256,
            })
        })
        .collect()
}

/// Files whose current digest differs from the record (or that are gone).
pub fn changed_files(root: &Path, recorded: &[FileDigest]) -> Vec<String> {
    recorded
        .iter()
        .filter(|f| sha256_file(&root.join(&f.path)).map_or(true, |d| d != f.sha256))
        .map(|f| f.path.clone())
        .collect()
}

/// Exclusive writer lock on an output root, released on drop.
#[derive(Debug)]
pub struct RootLock {
    path: std::path::PathBuf,
}

pub const LOCK_FILE: &str = ".dci.lock";

impl RootLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                Err(PipelineError::Locked(format!("process {} ({})", holder.trim(), path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RootLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
