//! Release-level class labeling: a version-class pair is defective when the
//! version is affected by at least one defect whose fix touched the class.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use log::warn;
use rayon::prelude::*;

use crate::avlabel::{ground_truth_labeling, AffectedLabeling};
use crate::error::{Error, Result};
use crate::lifecycle::{DefectLifecycle, VersionTimeline};
use crate::vcs::{snapshot_commit, CommitRecord, Repository};

/// Method label used for the developer-provided labeling.
pub const ACTUAL: &str = "Actual";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtensionFilter {
    suffixes: Vec<String>,
}

impl Default for ExtensionFilter {
    fn default() -> Self {
        ExtensionFilter::new([".java"])
    }
}

impl ExtensionFilter {
    /// An empty list accepts every path.
    pub fn new<I, S>(suffixes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let suffixes = suffixes
            .into_iter()
            .map(Into::into)
            .map(|s: String| if s.starts_with('.') { s } else { format!(".{s}") })
            .collect();
        ExtensionFilter { suffixes }
    }

    pub fn matches(&self, path: &str) -> bool {
        self.suffixes.is_empty() || self.suffixes.iter().any(|s| path.ends_with(s.as_str()))
    }

    pub fn suffixes(&self) -> &[String] {
        &self.suffixes
    }
}

pub type ClassVersionKey = (usize, String);

pub fn touched_classes<'a, I>(fix_commits: I, filter: &ExtensionFilter) -> BTreeSet<String>
where
    I: IntoIterator<Item = &'a CommitRecord>,
{
    fix_commits
        .into_iter()
        .flat_map(|c| c.touched_paths())
        .filter(|p| filter.matches(p))
        .map(str::to_owned)
        .collect()
}

/// Filtered paths present in the snapshot of `version` (the latest commit at
/// or before its release date).
pub fn class_universe(
    repo: &dyn Repository,
    commits: &[CommitRecord],
    timeline: &VersionTimeline,
    version: usize,
    filter: &ExtensionFilter,
) -> Result<BTreeSet<String>> {
    let release = timeline
        .release(version)
        .ok_or_else(|| Error::Invalid(format!("version index {version} outside the timeline")))?;
    let Some(snapshot) = snapshot_commit(commits, release.release_date) else {
        warn!("no commit at or before release {}; empty class universe", release.name);
        return Ok(BTreeSet::new());
    };
    Ok(repo
        .files_at(&snapshot.id)?
        .into_iter()
        .filter(|p| filter.matches(p))
        .collect())
}

/// Universes of versions `1..=upto`, computed in parallel.
pub fn class_universes(
    repo: &dyn Repository,
    commits: &[CommitRecord],
    timeline: &VersionTimeline,
    upto: usize,
    filter: &ExtensionFilter,
) -> Result<BTreeMap<usize, BTreeSet<String>>> {
    (1..=upto)
        .into_par_iter()
        .map(|v| class_universe(repo, commits, timeline, v, filter).map(|u| (v, u)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DefectivenessMatrix {
    pub method: String,
    pub entries: BTreeMap<ClassVersionKey, bool>,
    /// Defects reaching each pair, including pairs outside the universe.
    pub defect_hits: BTreeMap<ClassVersionKey, BTreeSet<String>>,
}

impl DefectivenessMatrix {
    pub fn is_defective(&self, version: usize, path: &str) -> bool {
        self.entries.get(&(version, path.to_owned())).copied().unwrap_or(false)
    }

    pub fn defective_count(&self) -> usize {
        self.entries.values().filter(|d| **d).count()
    }

    /// Entries restricted to versions `1..=upto`.
    pub fn rows_upto(&self, upto: usize) -> impl Iterator<Item = (&ClassVersionKey, &bool)> {
        self.entries.range((1, String::new())..(upto + 1, String::new()))
    }
}

/// Builds the matrix from per-defect labelings and the classes each defect's
/// fix touched (keyed by issue key).
pub fn label_classes(
    method: &str,
    labelings: &[AffectedLabeling],
    touched: &BTreeMap<String, BTreeSet<String>>,
    universes: &BTreeMap<usize, BTreeSet<String>>,
) -> DefectivenessMatrix {
    let mut hits: BTreeMap<ClassVersionKey, BTreeSet<String>> = BTreeMap::new();
    for labeling in labelings {
        let Some(classes) = touched.get(&labeling.issue_key) else {
            continue;
        };
        for v in labeling.affected_versions() {
            for c in classes {
                hits.entry((v, c.clone())).or_default().insert(labeling.issue_key.clone());
            }
        }
    }

    let all_classes: BTreeSet<&String> = universes.values().flatten().collect();
    let orphans: BTreeSet<&String> = touched.values().flatten().filter(|c| !all_classes.contains(c)).collect();
    for c in orphans {
        warn!("{method}: fixed class {c} is absent from every release snapshot");
    }

    let entries = universes
        .iter()
        .flat_map(|(v, classes)| {
            classes.iter().map(|c| {
                let key = (*v, c.clone());
                let defective = hits.get(&key).is_some_and(|h| !h.is_empty());
                (key, defective)
            })
        })
        .collect();
    DefectivenessMatrix {
        method: method.to_owned(),
        entries,
        defect_hits: hits,
    }
}

pub fn ground_truth_classes(
    defects: &[DefectLifecycle],
    touched: &BTreeMap<String, BTreeSet<String>>,
    universes: &BTreeMap<usize, BTreeSet<String>>,
) -> Result<DefectivenessMatrix> {
    let labelings = defects.iter().map(ground_truth_labeling).collect::<Result<Vec<_>>>()?;
    Ok(label_classes(ACTUAL, &labelings, touched, universes))
}

/// Writes `project,method,version_index,path,defective` rows; returns the row count.
pub fn write_class_labels<W: Write>(out: W, project: &str, matrices: &[DefectivenessMatrix]) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["project", "method", "version_index", "path", "defective"])?;
    let mut rows = 0;
    for m in matrices {
        for ((v, path), defective) in &m.entries {
            w.write_record([project, &m.method, &v.to_string(), path, if *defective { "1" } else { "0" }])?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| Error::io("class labels", e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avlabel::Method;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn commit(paths: &[&str]) -> CommitRecord {
        CommitRecord {
            id: "f".into(),
            parents: vec!["p".into()],
            author: "a".into(),
            timestamp: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            message: String::new(),
            changes: paths
                .iter()
                .map(|p| crate::vcs::FileChange {
                    path: (*p).into(),
                    added: 1,
                    removed: vec![],
                    binary: false,
                })
                .collect(),
        }
    }

    fn labeling(key: &str, affected: &[usize], fv: usize) -> AffectedLabeling {
        AffectedLabeling {
            issue_key: key.into(),
            method: Some(Method::Simple),
            iv: None,
            affected: (1..=fv).map(|v| affected.contains(&v)).collect(),
        }
    }

    fn paths(ps: &[&str]) -> BTreeSet<String> {
        ps.iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn touched_classes_filter_and_union() {
        let f = ExtensionFilter::default();
        assert_eq!(touched_classes([&commit(&["F1.java", "F2.java"])], &f), paths(&["F1.java", "F2.java"]));
        assert!(touched_classes([&commit(&["README.md"])], &f).is_empty());
        let a = commit(&["x/A.java", "doc.txt"]);
        let b = commit(&["x/B.java", "x/A.java"]);
        assert_eq!(touched_classes([&a, &b], &f), paths(&["x/A.java", "x/B.java"]));
        assert!(ExtensionFilter::new(Vec::<String>::new()).matches("README"));
        assert!(ExtensionFilter::new(["kt"]).matches("A.kt"));
    }

    #[test]
    fn figure_like_fixture() {
        // Three releases, three classes; defect-3 affects v1 and its fix
        // touches F1; defect-2 affects v2..v3 and touches F2 and F3.
        let universes: BTreeMap<usize, BTreeSet<String>> = [
            (1, paths(&["F1.java", "F2.java"])),
            (2, paths(&["F1.java", "F2.java", "F3.java"])),
            (3, paths(&["F1.java", "F2.java", "F3.java"])),
        ]
        .into();
        let touched: BTreeMap<String, BTreeSet<String>> = [
            ("D-3".to_string(), paths(&["F1.java"])),
            ("D-2".to_string(), paths(&["F2.java", "F3.java"])),
        ]
        .into();
        let m = label_classes("Simple", &[labeling("D-3", &[1], 2), labeling("D-2", &[2, 3], 4)], &touched, &universes);
        let defective: Vec<(usize, &str)> = m
            .entries
            .iter()
            .filter(|(_, d)| **d)
            .map(|((v, p), _)| (*v, p.as_str()))
            .collect();
        assert_eq!(
            defective,
            vec![(1, "F1.java"), (2, "F2.java"), (2, "F3.java"), (3, "F2.java"), (3, "F3.java")]
        );
        assert_eq!(m.entries.len(), 8);
        assert!(!m.is_defective(1, "F2.java"));
        assert_eq!(m.rows_upto(1).count(), 2);
    }

    #[test]
    fn no_defects_is_all_clean() {
        let universes: BTreeMap<usize, BTreeSet<String>> = [(1, paths(&["A.java"]))].into();
        let m = label_classes("Simple", &[], &BTreeMap::new(), &universes);
        assert_eq!(m.defective_count(), 0);
        assert_eq!(m.entries.len(), 1);
    }

    #[test]
    fn orphaned_class_stays_in_diagnostics_only() {
        let universes: BTreeMap<usize, BTreeSet<String>> = [(1, paths(&["A.java"]))].into();
        let touched: BTreeMap<String, BTreeSet<String>> = [("D".to_string(), paths(&["Gone.java"]))].into();
        let m = label_classes("Simple", &[labeling("D", &[1], 2)], &touched, &universes);
        assert_eq!(m.defective_count(), 0);
        assert!(m.defect_hits.contains_key(&(1, "Gone.java".to_string())));
    }

    #[test]
    fn csv_layout() {
        let universes: BTreeMap<usize, BTreeSet<String>> = [(1, paths(&["A.java"]))].into();
        let touched: BTreeMap<String, BTreeSet<String>> = [("D".to_string(), paths(&["A.java"]))].into();
        let m = label_classes("SZZ_B", &[labeling("D", &[1], 2)], &touched, &universes);
        let mut buf = Vec::new();
        assert_eq!(write_class_labels(&mut buf, "P", &[m]).unwrap(), 1);
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "project,method,version_index,path,defective\nP,SZZ_B,1,A.java,1\n"
        );
    }

    fn brute_force(
        labelings: &[AffectedLabeling],
        touched: &BTreeMap<String, BTreeSet<String>>,
        universes: &BTreeMap<usize, BTreeSet<String>>,
    ) -> BTreeMap<ClassVersionKey, bool> {
        let mut out = BTreeMap::new();
        for (v, classes) in universes {
            for c in classes {
                let mut d = false;
                for l in labelings {
                    if *v <= l.affected.len() && l.affected[*v - 1] && touched.get(&l.issue_key).is_some_and(|t| t.contains(c)) {
                        d = true;
                    }
                }
                out.insert((*v, c.clone()), d);
            }
        }
        out
    }

    fn arb_case() -> impl Strategy<Value = (Vec<AffectedLabeling>, BTreeMap<String, BTreeSet<String>>, BTreeMap<usize, BTreeSet<String>>)> {
        let versions = 5usize;
        let defects = prop::collection::vec(
            (2usize..=versions + 1, prop::collection::vec(any::<bool>(), versions + 1), prop::collection::btree_set(0usize..6, 0..4)),
            0..6,
        );
        let universes = prop::collection::vec(prop::collection::btree_set(0usize..6, 0..6), versions);
        (defects, universes).prop_map(|(defects, universes)| {
            let mut labelings = Vec::new();
            let mut touched = BTreeMap::new();
            for (i, (fv, bits, classes)) in defects.into_iter().enumerate() {
                let key = format!("D-{i}");
                let mut affected: Vec<bool> = bits[..fv].to_vec();
                affected[fv - 1] = false;
                labelings.push(AffectedLabeling { issue_key: key.clone(), method: Some(Method::Simple), iv: None, affected });
                touched.insert(key, classes.into_iter().map(|c| format!("C{c}.java")).collect());
            }
            let universes = universes
                .into_iter()
                .enumerate()
                .map(|(i, s)| (i + 1, s.into_iter().map(|c| format!("C{c}.java")).collect()))
                .collect();
            (labelings, touched, universes)
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((labelings, touched, universes) in arb_case()) {
            let m = label_classes("X", &labelings, &touched, &universes);
            prop_assert_eq!(&m.entries, &brute_force(&labelings, &touched, &universes));
            for (k, d) in &m.entries {
                prop_assert_eq!(*d, m.defect_hits.get(k).is_some_and(|h| !h.is_empty()));
            }
        }

        #[test]
        fn subset_labelings_give_subset_matrices((labelings, touched, universes) in arb_case(), mask in any::<u64>()) {
            let narrowed: Vec<AffectedLabeling> = labelings
                .iter()
                .enumerate()
                .map(|(i, l)| AffectedLabeling {
                    affected: l.affected.iter().enumerate().map(|(j, a)| *a && (mask >> ((i * 7 + j) % 64)) & 1 == 1).collect(),
                    ..l.clone()
                })
                .collect();
            let a = label_classes("A", &narrowed, &touched, &universes);
            let b = label_classes("B", &labelings, &touched, &universes);
            for (k, d) in &a.entries {
                prop_assert!(!d || b.entries[k]);
            }
            let touched_any: BTreeSet<&String> = touched.values().flatten().collect();
            for ((_, c), d) in &b.entries {
                prop_assert!(!d || touched_any.contains(c));
            }
        }
    }
}
