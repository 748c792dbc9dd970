//! Atomic output files and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub stages: Vec<String>,
    pub config: serde_json::Value,
    pub metadata: BTreeMap<String, String>,
    pub files: Vec<FileEntry>,
    pub notices: Vec<String>,
}

/// Output directory plus the manifest being accumulated for it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    manifest: Manifest,
}

impl OutputDir {
    pub fn new(root: PathBuf, config: serde_json::Value) -> Self {
        OutputDir {
            root,
            manifest: Manifest {
                tool: "dlm",
                version: env!("CARGO_PKG_VERSION"),
                status: "running".into(),
                failed_stage: None,
                error: None,
                stages: Vec::new(),
                config,
                metadata: BTreeMap::new(),
                files: Vec::new(),
                notices: Vec::new(),
            },
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Renders a CSV into memory with `render` (which returns the data-row
    /// count) and writes it atomically.
    pub fn csv<F>(&mut self, rel: &str, render: F) -> Result<usize>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<usize>,
    {
        let mut buf = Vec::new();
        let rows = render(&mut buf)?;
        atomic_write(&self.root.join(rel), &buf)?;
        self.manifest.files.push(FileEntry {
            path: rel.to_owned(),
            rows,
        });
        Ok(rows)
    }

    pub fn notice(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::info!("{msg}");
        self.manifest.notices.push(msg);
    }

    pub fn metadata(&mut self, key: &str, value: impl Into<String>) {
        self.manifest.metadata.insert(key.to_owned(), value.into());
    }

    pub fn stage_done(&mut self, stage: &str) {
        self.manifest.stages.push(stage.to_owned());
    }

    pub fn finish(&mut self) -> Result<Manifest> {
        self.manifest.status = "complete".into();
        self.write_manifest()?;
        Ok(self.manifest.clone())
    }

    pub fn fail(&mut self, stage: &str, error: &Error) -> Result<()> {
        self.manifest.status = "failed".into();
        self.manifest.failed_stage = Some(stage.to_owned());
        self.manifest.error = Some(error.to_string());
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(&self.manifest)?;
        json.push(b'\n');
        atomic_write(&self.root.join("manifest.json"), &json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.csv");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }

    #[test]
    fn manifest_records_files_and_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::new(dir.path().to_path_buf(), serde_json::json!({}));
        let rows = out
            .csv("x.csv", |b| {
                b.extend_from_slice(b"h\n1\n2\n");
                Ok(2)
            })
            .unwrap();
        assert_eq!(rows, 2);
        out.fail("features", &Error::Invalid("boom".into())).unwrap();
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["status"], "failed");
        assert_eq!(m["failed_stage"], "features");
        assert_eq!(m["files"][0]["rows"], 2);
    }
}
