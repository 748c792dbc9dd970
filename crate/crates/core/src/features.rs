//! Per version-class features and the cumulative datasets fed to feature
//! selection.
//!
//! Product features come from the release snapshot. Process features cover
//! the commits of the release interval, i.e. after the previous release date
//! and up to this one; age features are measured from the file's first commit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use log::warn;
use rayon::prelude::*;
use serde::Deserialize;

use crate::classlabel::{DefectivenessMatrix, ExtensionFilter};
use crate::error::{Error, Result};
use crate::lifecycle::VersionTimeline;
use crate::vcs::{snapshot_commit, CommitRecord, Repository};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Product,
    Process,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub description: String,
}

/// Names the built-in calculator knows, in default catalog order.
pub const KNOWN_FEATURES: [&str; 17] = [
    "size",
    "size_code",
    "loc_added",
    "max_loc_added",
    "avg_loc_added",
    "loc_deleted",
    "churn",
    "max_churn",
    "avg_churn",
    "nr",
    "nauth",
    "avg_chgset",
    "max_chgset",
    "age_weeks",
    "weighted_age",
    "nfix",
    "cochanged_files",
];

const DEFAULT_DESCRIPTIONS: [(FeatureKind, &str); 17] = [
    (FeatureKind::Product, "lines of code"),
    (FeatureKind::Product, "lines of code excluding blank and comment-only lines"),
    (FeatureKind::Process, "lines added in the release"),
    (FeatureKind::Process, "maximum lines added by one revision in the release"),
    (FeatureKind::Process, "average lines added per revision in the release"),
    (FeatureKind::Process, "lines deleted in the release"),
    (FeatureKind::Process, "lines added plus lines deleted in the release"),
    (FeatureKind::Process, "maximum churn of one revision in the release"),
    (FeatureKind::Process, "average churn per revision in the release"),
    (FeatureKind::Process, "revisions in the release"),
    (FeatureKind::Process, "distinct authors in the release"),
    (FeatureKind::Process, "average files per change set in the release"),
    (FeatureKind::Process, "maximum files per change set in the release"),
    (FeatureKind::Process, "weeks from the first commit to the release date"),
    (FeatureKind::Process, "release-interval age in weeks weighted by lines added"),
    (FeatureKind::Process, "defect-fix revisions in the release"),
    (FeatureKind::Process, "distinct other files changed together in the release"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCatalog {
    entries: Vec<FeatureSpec>,
}

impl Default for FeatureCatalog {
    fn default() -> Self {
        FeatureCatalog {
            entries: KNOWN_FEATURES
                .iter()
                .zip(DEFAULT_DESCRIPTIONS)
                .map(|(name, (kind, description))| FeatureSpec {
                    name: (*name).to_owned(),
                    kind,
                    description: description.to_owned(),
                })
                .collect(),
        }
    }
}

impl FeatureCatalog {
    pub fn new(entries: Vec<FeatureSpec>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !KNOWN_FEATURES.contains(&e.name.as_str()) {
                return Err(Error::Config(format!("feature {:?} has no calculator", e.name)));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Config(format!("feature {:?} listed twice", e.name)));
            }
        }
        if entries.is_empty() {
            return Err(Error::Config("feature catalog is empty".into()));
        }
        Ok(FeatureCatalog { entries })
    }

    /// Reads a `name,kind,description` CSV.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<FeatureSpec>, _>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[FeatureSpec] {
        &self.entries
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub version: usize,
    pub path: String,
    pub values: Vec<f64>,
    pub defective: bool,
}

#[derive(Debug, Clone)]
struct Revision {
    timestamp: DateTime<Utc>,
    author: String,
    added: usize,
    deleted: usize,
    changeset: Vec<String>,
    is_fix: bool,
}

/// Per-path revision history, built once per project.
#[derive(Debug, Clone, Default)]
pub struct ChangeHistory {
    by_path: HashMap<String, Vec<Revision>>,
}

impl ChangeHistory {
    /// `fix_commits` marks the revisions counted by `nfix`.
    pub fn new(commits: &[CommitRecord], fix_commits: &BTreeSet<String>) -> Self {
        let mut by_path: HashMap<String, Vec<Revision>> = HashMap::new();
        for c in commits.iter().filter(|c| !c.is_merge()) {
            let changeset: Vec<String> = c.touched_paths().map(str::to_owned).collect();
            for ch in &c.changes {
                by_path.entry(ch.path.clone()).or_default().push(Revision {
                    timestamp: c.timestamp,
                    author: c.author.clone(),
                    added: ch.added,
                    deleted: ch.removed_count(),
                    changeset: changeset.clone(),
                    is_fix: fix_commits.contains(&c.id),
                });
            }
        }
        for revs in by_path.values_mut() {
            revs.sort_by_key(|r| r.timestamp);
        }
        ChangeHistory { by_path }
    }

    fn revisions(&self, path: &str) -> &[Revision] {
        self.by_path.get(path).map_or(&[], Vec::as_slice)
    }
}

fn weeks(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    (to - from).num_seconds().max(0) as f64 / (7.0 * 86_400.0)
}

fn ratio(num: f64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// Lines that are neither blank nor inside `//` or `/* */` comments.
pub fn code_lines(text: &str) -> usize {
    let mut in_block = false;
    let mut count = 0;
    for line in text.lines() {
        let mut rest = line.trim();
        let mut has_code = false;
        while !rest.is_empty() {
            if in_block {
                match rest.find("*/") {
                    Some(i) => {
                        in_block = false;
                        rest = rest[i + 2..].trim_start();
                    }
                    None => rest = "",
                }
            } else if rest.starts_with("//") {
                rest = "";
            } else if let Some(r) = rest.strip_prefix("/*") {
                in_block = true;
                rest = r;
            } else {
                has_code = true;
                match rest.find("/*") {
                    Some(i) => rest = &rest[i..],
                    None => rest = "",
                }
            }
        }
        if has_code {
            count += 1;
        }
    }
    count
}

/// Computes all known features of one class; `window` is the release
/// interval `(start, end]`, `start = None` meaning unbounded.
fn compute_all(
    content: &str,
    revisions: &[Revision],
    path: &str,
    start: Option<DateTime<Utc>>,
    end: DateTime<Utc>,
) -> [f64; 17] {
    let in_window: Vec<&Revision> = revisions
        .iter()
        .filter(|r| r.timestamp <= end && start.is_none_or(|s| r.timestamp > s))
        .collect();
    let nr = in_window.len();
    let added: usize = in_window.iter().map(|r| r.added).sum();
    let deleted: usize = in_window.iter().map(|r| r.deleted).sum();
    let max_added = in_window.iter().map(|r| r.added).max().unwrap_or(0);
    let max_churn = in_window.iter().map(|r| r.added + r.deleted).max().unwrap_or(0);
    let authors: BTreeSet<&str> = in_window.iter().map(|r| r.author.as_str()).collect();
    let chg_total: usize = in_window.iter().map(|r| r.changeset.len()).sum();
    let chg_max = in_window.iter().map(|r| r.changeset.len()).max().unwrap_or(0);
    let first = revisions.iter().map(|r| r.timestamp).filter(|t| *t <= end).min();
    let weighted_age = if added == 0 {
        0.0
    } else {
        in_window.iter().map(|r| weeks(r.timestamp, end) * r.added as f64).sum::<f64>() / added as f64
    };
    let nfix = in_window.iter().filter(|r| r.is_fix).count();
    let cochanged: BTreeSet<&str> = in_window
        .iter()
        .flat_map(|r| r.changeset.iter().map(String::as_str))
        .filter(|p| *p != path)
        .collect();

    [
        content.lines().count() as f64,
        code_lines(content) as f64,
        added as f64,
        max_added as f64,
        ratio(added as f64, nr),
        deleted as f64,
        (added + deleted) as f64,
        max_churn as f64,
        ratio((added + deleted) as f64, nr),
        nr as f64,
        authors.len() as f64,
        ratio(chg_total as f64, nr),
        chg_max as f64,
        first.map_or(0.0, |f| weeks(f, end)),
        weighted_age,
        nfix as f64,
        cochanged.len() as f64,
    ]
}

fn project(all: &[f64; 17], catalog: &FeatureCatalog) -> Vec<f64> {
    catalog
        .entries()
        .iter()
        .map(|e| {
            let i = KNOWN_FEATURES.iter().position(|n| *n == e.name).expect("validated catalog");
            all[i]
        })
        .collect()
}

/// Feature rows (defectiveness unset) for every filtered class in the
/// snapshot of `version`, ordered by path.
pub fn compute_features(
    repo: &dyn Repository,
    commits: &[CommitRecord],
    history: &ChangeHistory,
    timeline: &VersionTimeline,
    version: usize,
    catalog: &FeatureCatalog,
    filter: &ExtensionFilter,
) -> Result<Vec<FeatureRow>> {
    let release = timeline
        .release(version)
        .ok_or_else(|| Error::Invalid(format!("version index {version} outside the timeline")))?;
    let end = release.release_date;
    let start = version.checked_sub(1).and_then(|p| timeline.release(p)).map(|r| r.release_date);
    let Some(snapshot) = snapshot_commit(commits, end) else {
        warn!("no commit at or before release {}; no feature rows", release.name);
        return Ok(Vec::new());
    };
    let paths: Vec<String> = repo
        .files_at(&snapshot.id)?
        .into_iter()
        .filter(|p| filter.matches(p))
        .collect();
    let contents = repo.files_content(&snapshot.id, &paths)?;

    let rows: Vec<(FeatureRow, bool)> = paths
        .par_iter()
        .zip(contents.par_iter())
        .map(|(path, bytes)| {
            let bytes = bytes.as_deref().unwrap_or(&[]);
            let (content, lossy) = match std::str::from_utf8(bytes) {
                Ok(s) => (std::borrow::Cow::Borrowed(s), false),
                Err(_) => (String::from_utf8_lossy(bytes), true),
            };
            let all = compute_all(&content, history.revisions(path), path, start, end);
            let row = FeatureRow {
                version,
                path: path.clone(),
                values: project(&all, catalog),
                defective: false,
            };
            (row, lossy)
        })
        .collect();
    let lossy = rows.iter().filter(|(_, l)| *l).count();
    if lossy > 0 {
        warn!("{} files in release {} are not UTF-8; sized on raw lines", lossy, release.name);
    }
    Ok(rows.into_iter().map(|(r, _)| r).collect())
}

/// Versions kept after dropping the most recent half.
pub fn retained_versions(total: usize) -> usize {
    total / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub method: String,
    pub r: usize,
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

/// Rows of versions `1..=r` labeled from `matrix`.
pub fn build_dataset(
    features: &BTreeMap<usize, Vec<FeatureRow>>,
    catalog: &FeatureCatalog,
    matrix: &DefectivenessMatrix,
    r: usize,
    retained: usize,
) -> Result<Dataset> {
    if r == 0 || r > retained {
        return Err(Error::Invalid(format!("R = {r} outside the retained versions 1..={retained}")));
    }
    let rows = features
        .range(1..=r)
        .flat_map(|(_, rows)| rows.iter())
        .map(|row| FeatureRow {
            defective: matrix.is_defective(row.version, &row.path),
            ..row.clone()
        })
        .collect();
    Ok(Dataset {
        method: matrix.method.clone(),
        r,
        feature_names: catalog.names().into_iter().map(str::to_owned).collect(),
        rows,
    })
}

pub fn write_dataset<W: Write>(out: W, dataset: &Dataset) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["version".to_owned(), "path".to_owned()];
    header.extend(dataset.feature_names.iter().cloned());
    header.push("defective".into());
    w.write_record(&header)?;
    for row in &dataset.rows {
        let mut rec = vec![row.version.to_string(), row.path.clone()];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        rec.push(if row.defective { "1" } else { "0" }.into());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("dataset", e))?;
    Ok(dataset.rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::{build_timeline, RawVersion};
    use crate::vcs::{CommitLog, LoggedCommit, MemoryRepo};
    use crate::vcs::Repository;
    use chrono::TimeZone;

    fn day(d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 3, d, 12, 0, 0).unwrap()
    }

    fn lc(id: &str, parent: Option<&str>, d: u32, author: &str, files: &[(&str, Option<&str>)]) -> LoggedCommit {
        LoggedCommit {
            id: id.into(),
            parents: parent.map(|p| vec![p.to_string()]).unwrap_or_default(),
            author: author.into(),
            timestamp: day(d),
            message: id.into(),
            files: files.iter().map(|(p, c)| (p.to_string(), c.map(str::to_owned))).collect(),
        }
    }

    fn timeline(days: &[u32]) -> VersionTimeline {
        let raw: Vec<RawVersion> = days
            .iter()
            .enumerate()
            .map(|(i, d)| RawVersion {
                name: format!("1.{i}"),
                released: true,
                release_date: Some(Utc.with_ymd_and_hms(2021, 3, *d, 23, 0, 0).unwrap()),
            })
            .collect();
        build_timeline(&raw, &[]).unwrap()
    }

    /// Five commits on A.java across two releases (day 3 and day 10).
    fn five_commit_repo() -> (MemoryRepo, Vec<CommitRecord>) {
        let log = CommitLog {
            commits: vec![
                lc("c1", None, 1, "ann", &[("A.java", Some("a\nb\nc\n")), ("B.java", Some("x\n"))]),
                lc("c2", Some("c1"), 2, "bob", &[("A.java", Some("a\nB\nc\nd\n"))]),
                lc("c3", Some("c2"), 5, "ann", &[("A.java", Some("a\nB\nc\nd\ne\nf\n")), ("B.java", Some("y\n")), ("R.md", Some("r\n"))]),
                lc("c4", Some("c3"), 6, "cat", &[("A.java", Some("// note\nB\nc\nd\ne\nf\n"))]),
                lc("c5", Some("c4"), 8, "bob", &[("A.java", Some("// note\nB\nc\n\ne\n"))]),
            ],
        };
        let repo = MemoryRepo::from_log(&log).unwrap();
        let commits = repo.commits().unwrap();
        (repo, commits)
    }

    fn named(rows: &[FeatureRow], path: &str, catalog: &FeatureCatalog) -> BTreeMap<String, f64> {
        let row = rows.iter().find(|r| r.path == path).unwrap();
        catalog.names().iter().map(|n| n.to_string()).zip(row.values.iter().copied()).collect()
    }

    #[test]
    fn default_catalog_has_seventeen_unique_entries() {
        let c = FeatureCatalog::default();
        assert_eq!(c.len(), 17);
        assert_eq!(c.names().iter().collect::<BTreeSet<_>>().len(), 17);
    }

    #[test]
    fn catalog_csv_subset_and_errors() {
        let c = FeatureCatalog::from_csv("name,kind,description\nnr,process,revisions\nsize,product,loc\n".as_bytes()).unwrap();
        assert_eq!(c.names(), vec!["nr", "size"]);
        assert!(FeatureCatalog::from_csv("name,kind,description\nwmc,product,x\n".as_bytes()).is_err());
        assert!(FeatureCatalog::from_csv("name,kind,description\nnr,process,a\nnr,process,b\n".as_bytes()).is_err());
    }

    #[test]
    fn comment_free_size() {
        assert_eq!(code_lines("a\n\n// c\n/* x\n y */ b\n/* z */\nc /* d */\n"), 3);
        assert_eq!(code_lines("/**\n * doc\n */\nclass A {}\n"), 1);
    }

    #[test]
    fn five_commit_replay() {
        let (repo, commits) = five_commit_repo();
        let fixes: BTreeSet<String> = ["c4".to_string()].into();
        let history = ChangeHistory::new(&commits, &fixes);
        let tl = timeline(&[3, 10]);
        let catalog = FeatureCatalog::default();
        let filter = ExtensionFilter::default();

        let v1 = compute_features(&repo, &commits, &history, &tl, 1, &catalog, &filter).unwrap();
        assert_eq!(v1.iter().map(|r| r.path.as_str()).collect::<Vec<_>>(), vec!["A.java", "B.java"]);
        let a1 = named(&v1, "A.java", &catalog);
        // c1: +3; c2: replace b->B, add d => +2 -1.
        assert_eq!(a1["size"], 4.0);
        assert_eq!(a1["loc_added"], 5.0);
        assert_eq!(a1["loc_deleted"], 1.0);
        assert_eq!(a1["churn"], 6.0);
        assert_eq!(a1["max_churn"], 3.0);
        assert_eq!(a1["nr"], 2.0);
        assert_eq!(a1["nauth"], 2.0);
        assert_eq!(a1["avg_chgset"], 1.5);
        assert_eq!(a1["max_chgset"], 2.0);
        assert_eq!(a1["cochanged_files"], 1.0);
        assert_eq!(a1["nfix"], 0.0);
        let end = Utc.with_ymd_and_hms(2021, 3, 3, 23, 0, 0).unwrap();
        assert!((a1["age_weeks"] - weeks(day(1), end)).abs() < 1e-12);
        let wa = (weeks(day(1), end) * 3.0 + weeks(day(2), end) * 2.0) / 5.0;
        assert!((a1["weighted_age"] - wa).abs() < 1e-12);

        let v2 = compute_features(&repo, &commits, &history, &tl, 2, &catalog, &filter).unwrap();
        let a2 = named(&v2, "A.java", &catalog);
        // c3: +2; c4: a -> "// note" => +1 -1; c5: d->"", f removed => +1 -2.
        assert_eq!(a2["size"], 5.0);
        assert_eq!(a2["size_code"], 3.0);
        assert_eq!(a2["loc_added"], 4.0);
        assert_eq!(a2["max_loc_added"], 2.0);
        assert!((a2["avg_loc_added"] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(a2["loc_deleted"], 3.0);
        assert_eq!(a2["nr"], 3.0);
        assert_eq!(a2["nauth"], 3.0);
        assert_eq!(a2["nfix"], 1.0);
        assert_eq!(a2["max_chgset"], 3.0);
        assert_eq!(a2["cochanged_files"], 2.0);
        let b2 = named(&v2, "B.java", &catalog);
        assert_eq!(b2["nr"], 1.0);
        assert_eq!(b2["churn"], 2.0);
    }

    #[test]
    fn fresh_file_and_untouched_file() {
        let (repo, commits) = five_commit_repo();
        let history = ChangeHistory::new(&commits, &BTreeSet::new());
        let tl = timeline(&[3, 10, 20]);
        let catalog = FeatureCatalog::default();
        let filter = ExtensionFilter::default();
        let v1 = compute_features(&repo, &commits, &history, &tl, 1, &catalog, &filter).unwrap();
        let b1 = named(&v1, "B.java", &catalog);
        assert_eq!(b1["nr"], 1.0);
        assert_eq!(b1["churn"], 1.0);
        let v3 = compute_features(&repo, &commits, &history, &tl, 3, &catalog, &filter).unwrap();
        for row in &v3 {
            let m = named(&v3, &row.path, &catalog);
            for n in ["loc_added", "churn", "nr", "nauth", "avg_churn", "weighted_age"] {
                assert_eq!(m[n], 0.0, "{n}");
            }
            assert!(m["age_weeks"] > 0.0);
            assert!(row.values.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn datasets_are_nested_and_labelled() {
        let (repo, commits) = five_commit_repo();
        let history = ChangeHistory::new(&commits, &BTreeSet::new());
        let tl = timeline(&[3, 10, 20, 25]);
        let catalog = FeatureCatalog::default();
        let filter = ExtensionFilter::default();
        let features: BTreeMap<usize, Vec<FeatureRow>> = (1..=4)
            .map(|v| (v, compute_features(&repo, &commits, &history, &tl, v, &catalog, &filter).unwrap()))
            .collect();
        let mut matrix = DefectivenessMatrix { method: "Simple".into(), ..Default::default() };
        matrix.entries.insert((2, "A.java".into()), true);
        let retained = retained_versions(tl.len());
        assert_eq!(retained, 2);
        assert_eq!(retained_versions(10), 5);
        let d1 = build_dataset(&features, &catalog, &matrix, 1, retained).unwrap();
        let d2 = build_dataset(&features, &catalog, &matrix, 2, retained).unwrap();
        assert!(build_dataset(&features, &catalog, &matrix, 3, retained).is_err());
        assert_eq!(d1.rows.len(), 2);
        assert_eq!(d2.rows.len(), 4);
        assert_eq!(&d2.rows[..2], &d1.rows[..]);
        assert_eq!(d2.rows.iter().filter(|r| r.defective).count(), 1);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("version,path,size,size_code,"));
        assert!(text.lines().next().unwrap().ends_with(",cochanged_files,defective"));
        assert_eq!(text.lines().count(), 3);
    }
}
