//! Release timeline, per-defect life cycle (OV/FV/ground-truth IV) and AV
//! availability/consistency reporting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{parse_timestamp, IssueCommitLink, IssueRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawVersion {
    pub name: String,
    pub release_date: Option<DateTime<Utc>>,
    pub released: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Release {
    pub name: String,
    /// 1 = oldest.
    pub index: usize,
    pub release_date: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VersionTimeline {
    releases: Vec<Release>,
    name_index: BTreeMap<String, usize>,
}

impl VersionTimeline {
    pub fn releases(&self) -> &[Release] {
        &self.releases
    }

    pub fn len(&self) -> usize {
        self.releases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.releases.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.name_index.get(name).copied()
    }

    pub fn release(&self, index: usize) -> Option<&Release> {
        index.checked_sub(1).and_then(|i| self.releases.get(i))
    }

    /// Smallest index whose release date is at or after `t`.
    pub fn version_of_timestamp(&self, t: DateTime<Utc>) -> Option<usize> {
        let pos = self.releases.partition_point(|r| r.release_date < t);
        (pos < self.releases.len()).then_some(pos + 1)
    }

    /// Largest index whose release date is at or before `t`, floored at 1.
    pub fn opening_version(&self, t: DateTime<Utc>) -> usize {
        self.releases.partition_point(|r| r.release_date <= t).max(1)
    }
}

/// Orders released, dated versions by date (ties by name) and numbers them
/// from 1. Names matching any exclusion pattern are dropped first.
pub fn build_timeline(raw: &[RawVersion], exclusions: &[Regex]) -> Result<VersionTimeline> {
    let mut kept: Vec<(DateTime<Utc>, &str)> = raw
        .iter()
        .filter(|v| v.released)
        .filter(|v| !exclusions.iter().any(|re| re.is_match(&v.name)))
        .filter_map(|v| v.release_date.map(|d| (d, v.name.as_str())))
        .collect();
    kept.sort();
    kept.dedup_by(|a, b| a.1 == b.1);
    if kept.is_empty() {
        return Err(Error::Config("no released, dated versions remain for the timeline".into()));
    }
    let mut name_index = BTreeMap::new();
    let mut releases = Vec::with_capacity(kept.len());
    for (date, name) in kept {
        if name_index.contains_key(name) {
            return Err(Error::Config(format!("version {name} appears twice with different dates")));
        }
        let index = releases.len() + 1;
        name_index.insert(name.to_owned(), index);
        releases.push(Release {
            name: name.to_owned(),
            index,
            release_date: date,
        });
    }
    Ok(VersionTimeline { releases, name_index })
}

/// Reads `name,release_date,released` rows.
pub fn read_versions_csv<R: Read>(reader: R) -> Result<Vec<RawVersion>> {
    #[derive(Deserialize)]
    struct Row {
        name: String,
        release_date: String,
        released: String,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        let released = match row.released.trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" | "" => false,
            other => return Err(Error::Malformed(format!("version {}: released flag {other:?}", row.name))),
        };
        out.push(RawVersion {
            release_date: if row.release_date.trim().is_empty() {
                None
            } else {
                Some(parse_timestamp(&row.release_date).ok_or_else(|| {
                    Error::Malformed(format!("version {}: bad release date {:?}", row.name, row.release_date))
                })?)
            },
            name: row.name,
            released,
        });
    }
    Ok(out)
}

/// Reads the issue tracker's project-version array
/// (`[{"name":..,"releaseDate":..,"released":..}]`).
pub fn parse_versions_json(raw: &str) -> Result<Vec<RawVersion>> {
    #[derive(Deserialize)]
    #[serde(rename_all = "camelCase")]
    struct Entry {
        name: String,
        release_date: Option<String>,
        #[serde(default)]
        released: bool,
    }
    let entries: Vec<Entry> = serde_json::from_str(raw)?;
    entries
        .into_iter()
        .map(|e| {
            let release_date = match e.release_date.as_deref() {
                None | Some("") => None,
                Some(d) => Some(parse_timestamp(d).ok_or_else(|| {
                    Error::Malformed(format!("version {}: bad release date {d:?}", e.name))
                })?),
            };
            Ok(RawVersion {
                name: e.name,
                release_date,
                released: e.released,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectLifecycle {
    pub issue_key: String,
    pub ov: usize,
    pub fv: usize,
    /// All linked commits; class labeling uses every one of them.
    pub fix_commits: BTreeSet<String>,
    /// Timestamp of the latest fix commit, used to order defects.
    pub fix_time: DateTime<Utc>,
    pub ground_truth_avs: BTreeSet<usize>,
}

impl DefectLifecycle {
    pub fn ground_truth_iv(&self) -> Option<usize> {
        self.ground_truth_avs.iter().next().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Exclusion {
    Unlinked,
    UnreleasedFix,
    FixBeforeOpening,
    NotPostRelease,
}

impl Exclusion {
    pub fn reason(&self) -> &'static str {
        match self {
            Exclusion::Unlinked => "unlinked defect",
            Exclusion::UnreleasedFix => "unreleased fix",
            Exclusion::FixBeforeOpening => "fix version precedes opening version",
            Exclusion::NotPostRelease => "injected and fixed in the same version",
        }
    }
}

pub fn derive_lifecycle(
    issue: &IssueRecord,
    link: &IssueCommitLink,
    timeline: &VersionTimeline,
) -> std::result::Result<DefectLifecycle, Exclusion> {
    let last = crate::ingest::resolve_fix_commit(link).map_err(|_| Exclusion::Unlinked)?;
    let fv = timeline
        .version_of_timestamp(last.timestamp)
        .ok_or(Exclusion::UnreleasedFix)?;
    let ov = timeline.opening_version(issue.created);
    if ov > fv {
        return Err(Exclusion::FixBeforeOpening);
    }
    let ground_truth_avs = issue
        .affected_version_names
        .iter()
        .filter_map(|n| timeline.index_of(n))
        .collect();
    Ok(DefectLifecycle {
        issue_key: issue.key.clone(),
        ov,
        fv,
        fix_commits: link.commit_ids().map(str::to_owned).collect(),
        fix_time: last.timestamp,
        ground_truth_avs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AvUsability {
    pub available: bool,
    pub consistent: bool,
}

impl AvUsability {
    pub fn usable(&self) -> bool {
        self.available && self.consistent
    }
}

pub fn usability(defect: &DefectLifecycle) -> AvUsability {
    match defect.ground_truth_iv() {
        None => AvUsability {
            available: false,
            consistent: false,
        },
        Some(iv) => AvUsability {
            available: true,
            consistent: iv <= defect.ov,
        },
    }
}

/// `false` drops a defect whose ground-truth IV equals its FV.
pub fn post_release_filter(defect: &DefectLifecycle) -> bool {
    defect.ground_truth_iv() != Some(defect.fv)
}

/// Counts gathered per project for the availability/consistency report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectCounts {
    pub project: String,
    /// Fixed defects returned by the tracker query.
    pub defects: usize,
    /// Defects linked to a released fix commit and post-release.
    pub linked: usize,
    pub available: usize,
    pub consistent: usize,
    pub versions: usize,
}

impl ProjectCounts {
    pub fn from_defects(project: &str, fixed_defects: usize, kept: &[DefectLifecycle], versions: usize) -> Self {
        let flags: Vec<AvUsability> = kept.iter().map(usability).collect();
        ProjectCounts {
            project: project.to_owned(),
            defects: fixed_defects,
            linked: kept.len(),
            available: flags.iter().filter(|f| f.available).count(),
            consistent: flags.iter().filter(|f| f.usable()).count(),
            versions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rq1Row {
    pub project: String,
    pub defects: usize,
    pub linked: usize,
    pub available: usize,
    pub consistent: usize,
    pub versions: usize,
    /// `None` when the project has no linked defects.
    pub pct_available: Option<f64>,
    pub pct_consistent: Option<f64>,
}

impl Rq1Row {
    pub fn unusable(&self) -> usize {
        self.linked - self.consistent
    }

    pub fn pct_unusable(&self) -> Option<f64> {
        self.pct_consistent.map(|p| 100.0 - p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rq1Summary {
    pub projects: Vec<Rq1Row>,
    pub totals: Rq1Row,
}

fn pct(part: usize, whole: usize) -> Option<f64> {
    (whole > 0).then(|| 100.0 * part as f64 / whole as f64)
}

fn row(c: &ProjectCounts) -> Rq1Row {
    Rq1Row {
        project: c.project.clone(),
        defects: c.defects,
        linked: c.linked,
        available: c.available,
        consistent: c.consistent,
        versions: c.versions,
        pct_available: pct(c.available, c.linked),
        pct_consistent: pct(c.consistent, c.linked),
    }
}

pub fn rq1_summary(projects: &[ProjectCounts]) -> Rq1Summary {
    let rows: Vec<Rq1Row> = projects.iter().map(row).collect();
    let total = ProjectCounts {
        project: "TOTAL".into(),
        defects: projects.iter().map(|p| p.defects).sum(),
        linked: projects.iter().map(|p| p.linked).sum(),
        available: projects.iter().map(|p| p.available).sum(),
        consistent: projects.iter().map(|p| p.consistent).sum(),
        versions: projects.iter().map(|p| p.versions).sum(),
    };
    Rq1Summary {
        projects: rows,
        totals: row(&total),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionThresholds {
    pub min_usable_defects: usize,
    pub min_versions: usize,
    pub min_pct_usable: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        SelectionThresholds {
            min_usable_defects: 100,
            min_versions: 6,
            min_pct_usable: 50.0,
        }
    }
}

impl SelectionThresholds {
    /// Names of the thresholds `row` fails; empty when it is kept.
    pub fn failures(&self, row: &Rq1Row) -> Vec<String> {
        let mut out = Vec::new();
        if row.consistent < self.min_usable_defects {
            out.push(format!(
                "{} usable defects < {}",
                row.consistent, self.min_usable_defects
            ));
        }
        if row.versions < self.min_versions {
            out.push(format!("{} versions < {}", row.versions, self.min_versions));
        }
        match row.pct_consistent {
            Some(p) if p >= self.min_pct_usable => {}
            Some(p) => out.push(format!("{p:.2}% usable < {}%", self.min_pct_usable)),
            None => out.push("no linked defects".into()),
        }
        out
    }
}

pub fn select_projects(summary: &Rq1Summary, thresholds: &SelectionThresholds) -> Vec<String> {
    summary
        .projects
        .iter()
        .filter(|r| thresholds.failures(r).is_empty())
        .map(|r| r.project.clone())
        .collect()
}
