//! Version-control access.
//!
//! Two backends implement [`Repository`]: [`GitRepo`] shells out to the `git`
//! binary against a local clone, and [`MemoryRepo`] replays a JSON commit log
//! (the format written by the synthetic generator). Everything downstream
//! (SZZ, class universes, features) only sees the trait.

mod git;
mod memory;

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use git::GitRepo;
pub use memory::{CommitLog, LoggedCommit, MemoryRepo};

/// A line on the deletion side of a first-parent diff.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RemovedLine {
    /// 1-based line number in the parent revision.
    pub line: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub path: String,
    pub added: usize,
    pub removed: Vec<RemovedLine>,
    pub binary: bool,
}

impl FileChange {
    pub fn removed_count(&self) -> usize {
        self.removed.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub id: String,
    pub parents: Vec<String>,
    pub author: String,
    pub timestamp: DateTime<Utc>,
    pub message: String,
    /// Changes against the first parent, sorted by path. Empty for merges.
    pub changes: Vec<FileChange>,
}

impl CommitRecord {
    pub fn is_merge(&self) -> bool {
        self.parents.len() > 1
    }

    pub fn first_parent(&self) -> Option<&str> {
        self.parents.first().map(String::as_str)
    }

    pub fn touched_paths(&self) -> impl Iterator<Item = &str> {
        self.changes.iter().map(|c| c.path.as_str())
    }
}

pub trait Repository: Send + Sync {
    /// All commits of the analyzed branch, parents before children.
    fn commits(&self) -> Result<Vec<CommitRecord>>;

    /// Paths present in the tree of `commit`, sorted.
    fn files_at(&self, commit: &str) -> Result<Vec<String>>;

    /// Raw content of `path` at `commit`, `None` when absent.
    fn file_at(&self, commit: &str, path: &str) -> Result<Option<Vec<u8>>>;

    /// Bulk variant of [`Repository::file_at`].
    fn files_content(&self, commit: &str, paths: &[String]) -> Result<Vec<Option<Vec<u8>>>> {
        paths.iter().map(|p| self.file_at(commit, p)).collect()
    }

    /// For every line of `path` at `commit`, the commit that last modified it.
    fn blame(&self, commit: &str, path: &str) -> Result<Vec<String>>;
}

/// Opens a directory as a git clone or a file as a JSON commit log.
pub fn open(path: &Path, branch: Option<&str>) -> Result<Box<dyn Repository>> {
    if path.is_dir() {
        Ok(Box::new(GitRepo::open(path, branch)?))
    } else {
        Ok(Box::new(MemoryRepo::from_path(path)?))
    }
}

/// Latest commit whose timestamp is at or before `at`; later positions win ties.
pub fn snapshot_commit<'a>(commits: &'a [CommitRecord], at: DateTime<Utc>) -> Option<&'a CommitRecord> {
    let mut best: Option<&CommitRecord> = None;
    for c in commits.iter().filter(|c| c.timestamp <= at) {
        match best {
            Some(b) if b.timestamp > c.timestamp => {}
            _ => best = Some(c),
        }
    }
    best
}

pub fn distinct_paths(commits: &[CommitRecord]) -> BTreeSet<String> {
    commits
        .iter()
        .flat_map(|c| c.touched_paths().map(str::to_owned))
        .collect()
}
