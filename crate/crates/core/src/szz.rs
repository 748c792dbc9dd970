//! Basic SZZ: the deleted lines of every fix commit are blamed at the fix's
//! first parent, and the blamed commits are the candidate introducing
//! commits. Results of external SZZ tools enter through [`import_external_szz`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifecycle::{DefectLifecycle, VersionTimeline};
use crate::vcs::{CommitRecord, RemovedLine, Repository};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SzzSource {
    Basic,
    ImportedU,
    ImportedRa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntroducingCommitSet {
    pub issue_key: String,
    /// Sorted by hash.
    pub commits: BTreeSet<(String, DateTime<Utc>)>,
    pub source: SzzSource,
}

impl IntroducingCommitSet {
    pub fn is_empty(&self) -> bool {
        self.commits.is_empty()
    }
}

/// Commit lookup by hash over an extracted history.
#[derive(Debug)]
pub struct CommitIndex<'a> {
    by_id: HashMap<&'a str, &'a CommitRecord>,
}

impl<'a> CommitIndex<'a> {
    pub fn new(commits: &'a [CommitRecord]) -> Self {
        CommitIndex {
            by_id: commits.iter().map(|c| (c.id.as_str(), c)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&'a CommitRecord> {
        self.by_id.get(id).copied()
    }
}

/// Deletion side of the first-parent diff, without blank or whitespace-only
/// lines. Root commits yield nothing.
pub fn removed_lines(fix_commit: &CommitRecord) -> BTreeMap<String, Vec<RemovedLine>> {
    if fix_commit.parents.is_empty() {
        log::warn!("fix commit {} has no parent; nothing to blame", fix_commit.id);
        return BTreeMap::new();
    }
    fix_commit
        .changes
        .iter()
        .filter_map(|c| {
            let lines: Vec<RemovedLine> = c
                .removed
                .iter()
                .filter(|l| !l.text.trim().is_empty())
                .cloned()
                .collect();
            (!lines.is_empty()).then(|| (c.path.clone(), lines))
        })
        .collect()
}

pub fn blame_line(repo: &dyn Repository, path: &str, line: usize, at: &str) -> Result<String> {
    let owners = repo.blame(at, path)?;
    line.checked_sub(1)
        .and_then(|i| owners.get(i))
        .cloned()
        .ok_or_else(|| Error::Invalid(format!("{path}:{line} out of range at {at} ({} lines)", owners.len())))
}

/// Per-line blame failures collected while running SZZ.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SzzDiagnostics {
    pub skipped_lines: Vec<String>,
}

pub fn introducing_commits(
    defect: &DefectLifecycle,
    repo: &dyn Repository,
    index: &CommitIndex<'_>,
    diagnostics: &mut SzzDiagnostics,
) -> Result<IntroducingCommitSet> {
    let mut found = BTreeSet::new();
    for fix_id in &defect.fix_commits {
        let fix = index
            .get(fix_id)
            .ok_or_else(|| Error::Invalid(format!("fix commit {fix_id} of {} not in history", defect.issue_key)))?;
        let Some(parent) = fix.first_parent() else {
            continue;
        };
        for (path, lines) in removed_lines(fix) {
            let owners = match repo.blame(parent, &path) {
                Ok(o) => o,
                Err(e) => {
                    diagnostics.skipped_lines.push(format!("{}: {path}: {e}", defect.issue_key));
                    continue;
                }
            };
            for l in lines {
                let Some(owner) = l.line.checked_sub(1).and_then(|i| owners.get(i)) else {
                    diagnostics
                        .skipped_lines
                        .push(format!("{}: {path}:{} out of range", defect.issue_key, l.line));
                    continue;
                };
                let Some(intro) = index.get(owner) else {
                    diagnostics
                        .skipped_lines
                        .push(format!("{}: blamed commit {owner} not in history", defect.issue_key));
                    continue;
                };
                if intro.timestamp <= fix.timestamp {
                    found.insert((intro.id.clone(), intro.timestamp));
                }
            }
        }
    }
    Ok(IntroducingCommitSet {
        issue_key: defect.issue_key.clone(),
        commits: found,
        source: SzzSource::Basic,
    })
}

/// Oldest version among the introducing commits.
pub fn szz_iv(set: &IntroducingCommitSet, timeline: &VersionTimeline) -> Option<usize> {
    set.commits
        .iter()
        .filter_map(|(_, t)| timeline.version_of_timestamp(*t))
        .min()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportSkip {
    pub row: usize,
    pub reason: String,
}

/// Reads `issue_key,introducing_commit_hash,source` rows (source `U` or `RA`)
/// and groups them into one set per (issue, source).
pub fn import_external_szz<R: Read>(
    reader: R,
    index: &CommitIndex<'_>,
) -> Result<(Vec<IntroducingCommitSet>, Vec<ImportSkip>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Malformed(format!("external SZZ file lacks column {name}")))
    };
    let (ki, hi, si) = (col("issue_key")?, col("introducing_commit_hash")?, col("source")?);

    let mut sets: BTreeMap<(String, SzzSource), BTreeSet<(String, DateTime<Utc>)>> = BTreeMap::new();
    let mut skips = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let source = match field(si) {
            "U" => SzzSource::ImportedU,
            "RA" => SzzSource::ImportedRa,
            other => {
                skips.push(ImportSkip {
                    row,
                    reason: format!("unknown source {other:?}"),
                });
                continue;
            }
        };
        let hash = field(hi);
        let Some(commit) = index.get(hash) else {
            skips.push(ImportSkip {
                row,
                reason: format!("unknown commit {hash}"),
            });
            continue;
        };
        sets.entry((field(ki).to_owned(), source))
            .or_default()
            .insert((commit.id.clone(), commit.timestamp));
    }
    Ok((
        sets.into_iter()
            .map(|((issue_key, source), commits)| IntroducingCommitSet {
                issue_key,
                commits,
                source,
            })
            .collect(),
        skips,
    ))
}
