//! Issue-tracker export parsing, fixed-defect filtering and commit linking.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::vcs::{CommitRecord, Repository};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub key: String,
    pub created: DateTime<Utc>,
    pub issue_type: String,
    pub status: String,
    pub resolution: String,
    pub affected_version_names: Vec<String>,
    pub fix_version_names: Vec<String>,
}

/// A record that could not be turned into an [`IssueRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub index: usize,
    pub key: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedExport {
    pub issues: Vec<IssueRecord>,
    pub skipped: Vec<SkippedRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinkedCommit {
    pub id: String,
    pub timestamp: DateTime<Utc>,
}

/// Commits whose message mentions an issue key, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IssueCommitLink {
    pub issue_key: String,
    pub commits: Vec<LinkedCommit>,
}

impl IssueCommitLink {
    pub fn commit_ids(&self) -> impl Iterator<Item = &str> {
        self.commits.iter().map(|c| c.id.as_str())
    }
}

/// Parses a UTC-normalized timestamp from the formats issue trackers and
/// release CSVs use in practice.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f%z", "%Y-%m-%dT%H:%M:%S%z", "%Y-%m-%d %H:%M:%S%z"] {
        if let Ok(t) = DateTime::parse_from_str(raw, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

fn named(value: Option<&Value>) -> std::result::Result<String, String> {
    match value {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Object(o)) => match o.get("name") {
            None | Some(Value::Null) => Ok(String::new()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(format!("expected string name, found {other}")),
        },
        Some(other) => Err(format!("expected object with name, found {other}")),
    }
}

fn name_list(value: Option<&Value>, field: &str) -> std::result::Result<Vec<String>, String> {
    match value {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::Object(o) => match o.get("name") {
                    Some(Value::String(s)) => Ok(s.clone()),
                    _ => Err(format!("{field} entry without a string name")),
                },
                Value::String(s) => Ok(s.clone()),
                other => Err(format!("{field} entry has unexpected shape {other}")),
            })
            .collect(),
        Some(other) => Err(format!("{field} must be an array, found {other}")),
    }
}

/// Parses an issue-tracker export: a JSON array of issues (a top-level object
/// with an `issues` array is accepted as well).
///
/// Structural problems are fatal and name the offending index. A missing or
/// unparsable `key`/`fields.created` skips just that record.
pub fn parse_issue_export(raw: &str) -> Result<ParsedExport> {
    let doc: Value = serde_json::from_str(raw).map_err(|e| Error::MalformedExport {
        index: 0,
        reason: format!("not valid JSON: {e}"),
    })?;
    let items = match &doc {
        Value::Array(items) => items,
        Value::Object(o) => match o.get("issues") {
            Some(Value::Array(items)) => items,
            _ => {
                return Err(Error::MalformedExport {
                    index: 0,
                    reason: "expected an array of issues".into(),
                })
            }
        },
        _ => {
            return Err(Error::MalformedExport {
                index: 0,
                reason: "expected an array of issues".into(),
            })
        }
    };

    let mut out = ParsedExport::default();
    let mut seen = BTreeSet::new();
    for (index, item) in items.iter().enumerate() {
        let malformed = |reason: String| Error::MalformedExport { index, reason };
        let Value::Object(obj) = item else {
            return Err(malformed("issue is not an object".into()));
        };
        let fields = match obj.get("fields") {
            Some(Value::Object(f)) => Some(f),
            None | Some(Value::Null) => None,
            Some(_) => return Err(malformed("`fields` is not an object".into())),
        };
        let key = match obj.get("key") {
            Some(Value::String(k)) if !k.trim().is_empty() => Some(k.trim().to_owned()),
            None | Some(Value::Null) | Some(Value::String(_)) => None,
            Some(_) => return Err(malformed("`key` is not a string".into())),
        };
        let Some(key) = key else {
            out.skipped.push(SkippedRecord {
                index,
                key: None,
                reason: "missing key".into(),
            });
            continue;
        };
        let field = |name: &str| fields.and_then(|f| f.get(name));
        let created = match field("created") {
            Some(Value::String(s)) => parse_timestamp(s),
            None | Some(Value::Null) => None,
            Some(_) => return Err(malformed("`fields.created` is not a string".into())),
        };
        let Some(created) = created else {
            out.skipped.push(SkippedRecord {
                index,
                key: Some(key),
                reason: "missing or unparsable created timestamp".into(),
            });
            continue;
        };
        if !seen.insert(key.clone()) {
            out.skipped.push(SkippedRecord {
                index,
                key: Some(key),
                reason: "duplicate key".into(),
            });
            continue;
        }
        let issue_type = named(field("issuetype")).map_err(malformed)?;
        let status = named(field("status")).map_err(malformed)?;
        let resolution = named(field("resolution")).map_err(malformed)?;
        let affected_version_names = name_list(field("versions"), "versions").map_err(malformed)?;
        let fix_version_names = name_list(field("fixVersions"), "fixVersions").map_err(malformed)?;
        out.issues.push(IssueRecord {
            key,
            created,
            issue_type,
            status,
            resolution,
            affected_version_names,
            fix_version_names,
        });
    }
    Ok(out)
}

/// Keeps bugs that are closed or resolved as fixed.
pub fn filter_fixed_defects(issues: &[IssueRecord]) -> Vec<IssueRecord> {
    issues
        .iter()
        .filter(|i| {
            let t = i.issue_type.to_ascii_lowercase();
            let s = i.status.to_ascii_lowercase();
            (t == "bug" || t == "defect")
                && (s == "closed" || s == "resolved")
                && i.resolution.eq_ignore_ascii_case("fixed")
        })
        .cloned()
        .collect()
}

pub fn extract_commits(repo: &dyn Repository) -> Result<Vec<CommitRecord>> {
    let commits = repo.commits()?;
    if commits.is_empty() {
        return Err(Error::Malformed("repository has no commits on the analyzed branch".into()));
    }
    Ok(commits)
}

/// True when `key` occurs in `message` with non-alphanumeric characters (or
/// the string ends) on both sides.
pub fn mentions_key(message: &str, key: &str) -> bool {
    message.match_indices(key).any(|(start, _)| {
        let before = message[..start].chars().next_back();
        let after = message[start + key.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Links every key to the commits mentioning it. One link per key, sorted by
/// key; keys without commits get an empty link.
pub fn link_commits_to_issues(commits: &[CommitRecord], keys: &BTreeSet<String>) -> Vec<IssueCommitLink> {
    let hits: Vec<(usize, &String)> = commits
        .par_iter()
        .enumerate()
        .flat_map_iter(|(ci, c)| {
            keys.iter()
                .filter(move |k| c.message.contains(k.as_str()) && mentions_key(&c.message, k))
                .map(move |k| (ci, k))
        })
        .collect();

    let mut by_key: BTreeMap<&String, Vec<LinkedCommit>> = keys.iter().map(|k| (k, Vec::new())).collect();
    for (ci, key) in hits {
        let c = &commits[ci];
        by_key.get_mut(key).expect("key from set").push(LinkedCommit {
            id: c.id.clone(),
            timestamp: c.timestamp,
        });
    }
    by_key
        .into_iter()
        .map(|(key, mut linked)| {
            linked.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
            linked.dedup_by(|a, b| a.id == b.id);
            IssueCommitLink {
                issue_key: key.clone(),
                commits: linked,
            }
        })
        .collect()
}

/// The latest linked commit; the whole link stays the defect's fix set.
pub fn resolve_fix_commit(link: &IssueCommitLink) -> Result<&LinkedCommit> {
    link.commits
        .iter()
        .max_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)))
        .ok_or_else(|| Error::UnlinkedDefect(link.issue_key.clone()))
}
