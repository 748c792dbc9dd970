use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use similar::{capture_diff_slices, Algorithm, DiffOp};

use super::{CommitRecord, FileChange, RemovedLine, Repository};
use crate::error::{Error, Result};

/// One commit of a JSON commit log: full new content for every changed file,
/// `null` for a deletion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedCommit {
    pub id: String,
    #[serde(default)]
    pub parents: Vec<String>,
    pub author: String,
    pub timestamp: DateTime<Utc>,
    pub message: String,
    #[serde(default)]
    pub files: BTreeMap<String, Option<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitLog {
    pub commits: Vec<LoggedCommit>,
}

impl CommitLog {
    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

#[derive(Debug)]
struct FileState {
    lines: Vec<String>,
    owners: Vec<u32>,
}

type Tree = BTreeMap<String, Arc<FileState>>;

/// In-memory history replayed from a [`CommitLog`]. Diffs and blame are
/// computed with a Myers line diff against the first parent.
#[derive(Debug)]
pub struct MemoryRepo {
    records: Vec<CommitRecord>,
    trees: Vec<Tree>,
    index: HashMap<String, usize>,
}

impl MemoryRepo {
    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_log(&CommitLog::from_path(path)?)
    }

    pub fn from_log(log: &CommitLog) -> Result<Self> {
        let mut records = Vec::with_capacity(log.commits.len());
        let mut trees: Vec<Tree> = Vec::with_capacity(log.commits.len());
        let mut index: HashMap<String, usize> = HashMap::new();

        for (pos, commit) in log.commits.iter().enumerate() {
            if index.contains_key(&commit.id) {
                return Err(Error::Malformed(format!("duplicate commit id {}", commit.id)));
            }
            let base: Tree = match commit.parents.first() {
                None => Tree::new(),
                Some(p) => {
                    let &pi = index.get(p).ok_or_else(|| {
                        Error::Malformed(format!(
                            "commit {} lists parent {} that does not precede it",
                            commit.id, p
                        ))
                    })?;
                    trees[pi].clone()
                }
            };
            let mut tree = base.clone();
            let mut changes = Vec::new();
            for (path, content) in &commit.files {
                let old = base.get(path);
                let new_lines: Vec<String> = content
                    .as_deref()
                    .map(|c| c.lines().map(str::to_owned).collect())
                    .unwrap_or_default();
                let old_lines: &[String] = old.map(|f| f.lines.as_slice()).unwrap_or(&[]);
                let (change, owners) = diff_file(path, old, old_lines, &new_lines, pos as u32);
                if change.added > 0 || !change.removed.is_empty() || old.is_none() != content.is_none() {
                    changes.push(change);
                }
                match content {
                    Some(_) => {
                        tree.insert(
                            path.clone(),
                            Arc::new(FileState {
                                lines: new_lines,
                                owners,
                            }),
                        );
                    }
                    None => {
                        tree.remove(path);
                    }
                }
            }
            if commit.parents.len() > 1 {
                changes.clear();
            }
            index.insert(commit.id.clone(), pos);
            trees.push(tree);
            records.push(CommitRecord {
                id: commit.id.clone(),
                parents: commit.parents.clone(),
                author: commit.author.clone(),
                timestamp: commit.timestamp,
                message: commit.message.clone(),
                changes,
            });
        }
        Ok(MemoryRepo {
            records,
            trees,
            index,
        })
    }

    fn tree(&self, commit: &str) -> Result<&Tree> {
        self.index
            .get(commit)
            .map(|&i| &self.trees[i])
            .ok_or_else(|| Error::Malformed(format!("unknown commit {commit}")))
    }
}

fn diff_file(
    path: &str,
    old: Option<&Arc<FileState>>,
    old_lines: &[String],
    new_lines: &[String],
    commit: u32,
) -> (FileChange, Vec<u32>) {
    let mut removed = Vec::new();
    let mut added = 0;
    let mut owners = Vec::with_capacity(new_lines.len());
    for op in capture_diff_slices(Algorithm::Myers, old_lines, new_lines) {
        match op {
            DiffOp::Equal { old_index, len, .. } => {
                let src = old.expect("equal run implies an old file");
                owners.extend_from_slice(&src.owners[old_index..old_index + len]);
            }
            DiffOp::Delete {
                old_index, old_len, ..
            } => {
                removed.extend((old_index..old_index + old_len).map(|i| RemovedLine {
                    line: i + 1,
                    text: old_lines[i].clone(),
                }));
            }
            DiffOp::Insert { new_len, .. } => {
                added += new_len;
                owners.extend(std::iter::repeat(commit).take(new_len));
            }
            DiffOp::Replace {
                old_index,
                old_len,
                new_len,
                ..
            } => {
                removed.extend((old_index..old_index + old_len).map(|i| RemovedLine {
                    line: i + 1,
                    text: old_lines[i].clone(),
                }));
                added += new_len;
                owners.extend(std::iter::repeat(commit).take(new_len));
            }
        }
    }
    (
        FileChange {
            path: path.to_owned(),
            added,
            removed,
            binary: false,
        },
        owners,
    )
}

impl Repository for MemoryRepo {
    fn commits(&self) -> Result<Vec<CommitRecord>> {
        Ok(self.records.clone())
    }

    fn files_at(&self, commit: &str) -> Result<Vec<String>> {
        Ok(self.tree(commit)?.keys().cloned().collect())
    }

    fn file_at(&self, commit: &str, path: &str) -> Result<Option<Vec<u8>>> {
        Ok(self.tree(commit)?.get(path).map(|f| {
            let mut text = f.lines.join("\n");
            if !f.lines.is_empty() {
                text.push('\n');
            }
            text.into_bytes()
        }))
    }

    fn blame(&self, commit: &str, path: &str) -> Result<Vec<String>> {
        let file = self
            .tree(commit)?
            .get(path)
            .ok_or_else(|| Error::Malformed(format!("{path} does not exist at {commit}")))?;
        Ok(file
            .owners
            .iter()
            .map(|&o| self.records[o as usize].id.clone())
            .collect())
    }
}
