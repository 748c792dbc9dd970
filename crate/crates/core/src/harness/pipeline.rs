//! End-to-end orchestration: ingest, RQ1 report, affected-version labeling,
//! class labeling, feature datasets, feature selection, evaluation and
//! stability. Each CLI subcommand runs the stages up to and including its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::config::{ProjectConfig, RunConfig};
use super::output::{Manifest, OutputDir};
use super::stability::{stability_report, write_stability};
use crate::avlabel::{
    coldstart_p, estimate_project, ground_truth_labeling, label_defects, project_mean_p, AffectedLabeling, Method,
    ProjectEstimates, ProportionEstimate, DEFAULT_COLDSTART_P,
};
use crate::classlabel::{
    class_universes, ground_truth_classes, label_classes, touched_classes, write_class_labels, DefectivenessMatrix,
    ExtensionFilter, ACTUAL,
};
use crate::error::{Error, Result};
use crate::evalstats::{
    accuracy_metrics, compare_methods, confusion, format_metric, write_metrics, write_pairwise, write_rank_tables,
    Comparison, ConfusionCounts, Metric, MetricsRow,
};
use crate::features::{build_dataset, compute_features, retained_versions, write_dataset, ChangeHistory, Dataset, FeatureCatalog};
use crate::fselect::{exhaustive_search, selection_confusion, selection_frequency, write_frequencies, write_selections, SelectionResult};
use crate::ingest::{extract_commits, filter_fixed_defects, link_commits_to_issues, parse_issue_export, SkippedRecord};
use crate::lifecycle::{
    build_timeline, derive_lifecycle, parse_versions_json, post_release_filter, read_versions_csv, RawVersion, rq1_summary,
    usability, DefectLifecycle, Exclusion, ProjectCounts, Rq1Row, Rq1Summary, VersionTimeline,
};
use crate::szz::{import_external_szz, introducing_commits, szz_iv, CommitIndex, IntroducingCommitSet, SzzDiagnostics, SzzSource};
use crate::vcs::{self, CommitRecord, Repository};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Rq1,
    LabelAv,
    LabelClasses,
    Features,
    SelectFeatures,
    Evaluate,
    Stability,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Rq1,
        Stage::LabelAv,
        Stage::LabelClasses,
        Stage::Features,
        Stage::SelectFeatures,
        Stage::Evaluate,
        Stage::Stability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Rq1 => "rq1",
            Stage::LabelAv => "label-av",
            Stage::LabelClasses => "label-classes",
            Stage::Features => "features",
            Stage::SelectFeatures => "select-features",
            Stage::Evaluate => "evaluate",
            Stage::Stability => "stability",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub enforce_selection: bool,
    /// Last stage to run.
    pub until: Stage,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            out: out.into(),
            jobs: None,
            enforce_selection: false,
            until: Stage::Stability,
        }
    }
}

struct Project {
    cfg: ProjectConfig,
    repo: Box<dyn Repository>,
    commits: Vec<CommitRecord>,
    timeline: VersionTimeline,
    filter: ExtensionFilter,
    parse_skips: Vec<SkippedRecord>,
    excluded: Vec<(String, Exclusion)>,
    /// Linked, released-fix, post-release defects sorted by key.
    kept: Vec<DefectLifecycle>,
    counts: ProjectCounts,
}

impl Project {
    fn id(&self) -> &str {
        &self.cfg.id
    }

    fn usable(&self) -> Vec<DefectLifecycle> {
        self.kept.iter().filter(|d| usability(d).usable()).cloned().collect()
    }
}

fn read_versions(path: &Path) -> Result<Vec<RawVersion>> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_versions_json(&text)
    } else {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_versions_csv(f)
    }
}

fn ingest_project(cfg: &ProjectConfig) -> Result<Project> {
    let raw = std::fs::read_to_string(&cfg.issues).map_err(|e| Error::io(&cfg.issues, e))?;
    let parsed = parse_issue_export(&raw)?;
    let fixed = filter_fixed_defects(&parsed.issues);
    let repo = vcs::open(&cfg.repo, cfg.branch.as_deref())?;
    let commits = extract_commits(repo.as_ref())?;
    let timeline = build_timeline(&read_versions(&cfg.versions)?, &cfg.exclusion_patterns()?)?;

    let keys: BTreeSet<String> = fixed.iter().map(|i| i.key.clone()).collect();
    let links: BTreeMap<String, _> = link_commits_to_issues(&commits, &keys)
        .into_iter()
        .map(|l| (l.issue_key.clone(), l))
        .collect();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for issue in &fixed {
        match derive_lifecycle(issue, &links[&issue.key], &timeline) {
            Ok(d) if post_release_filter(&d) => kept.push(d),
            Ok(d) => excluded.push((d.issue_key, Exclusion::NotPostRelease)),
            Err(e) => excluded.push((issue.key.clone(), e)),
        }
    }
    kept.sort_by(|a, b| a.issue_key.cmp(&b.issue_key));
    kept.dedup_by(|a, b| a.issue_key == b.issue_key);
    excluded.sort_by(|a, b| a.0.cmp(&b.0));
    let counts = ProjectCounts::from_defects(&cfg.id, fixed.len(), &kept, timeline.len());
    Ok(Project {
        filter: cfg.filter(),
        cfg: cfg.clone(),
        repo,
        commits,
        timeline,
        parse_skips: parsed.skipped,
        excluded,
        kept,
        counts,
    })
}

struct Labeled {
    usable: Vec<DefectLifecycle>,
    estimates: ProjectEstimates,
    szz_sets: Vec<IntroducingCommitSet>,
    labelings: Vec<AffectedLabeling>,
    truth: Vec<AffectedLabeling>,
    notices: Vec<String>,
}

fn label_project(p: &Project, coldstart: ProportionEstimate) -> Result<Labeled> {
    let usable = p.usable();
    let methods = &p.cfg.methods;
    let sources: BTreeSet<SzzSource> = methods.iter().filter_map(|m| m.szz_source()).collect();
    let index = CommitIndex::new(&p.commits);
    let mut notices = Vec::new();
    let mut szz_sets = Vec::new();

    if sources.contains(&SzzSource::Basic) {
        let results: Vec<(IntroducingCommitSet, SzzDiagnostics)> = usable
            .par_iter()
            .map(|d| {
                let mut diag = SzzDiagnostics::default();
                introducing_commits(d, p.repo.as_ref(), &index, &mut diag).map(|s| (s, diag))
            })
            .collect::<Result<_>>()?;
        let skipped: usize = results.iter().map(|(_, d)| d.skipped_lines.len()).sum();
        if skipped > 0 {
            notices.push(format!("{}: {skipped} removed lines could not be blamed", p.id()));
        }
        szz_sets.extend(results.into_iter().map(|(s, _)| s));
    }
    if sources.contains(&SzzSource::ImportedU) || sources.contains(&SzzSource::ImportedRa) {
        let path = p
            .cfg
            .szz_import
            .as_ref()
            .ok_or_else(|| Error::Config(format!("[{}] imported SZZ methods need szz_import", p.id())))?;
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let (sets, skips) = import_external_szz(f, &index)?;
        if !skips.is_empty() {
            notices.push(format!("{}: {} external SZZ rows skipped", p.id(), skips.len()));
        }
        let keys: BTreeSet<&str> = usable.iter().map(|d| d.issue_key.as_str()).collect();
        szz_sets.extend(sets.into_iter().filter(|s| keys.contains(s.issue_key.as_str()) && sources.contains(&s.source)));
    }
    szz_sets.sort_by(|a, b| (a.source, &a.issue_key).cmp(&(b.source, &b.issue_key)));

    let mut szz_ivs: BTreeMap<SzzSource, BTreeMap<String, Option<usize>>> = BTreeMap::new();
    for s in &szz_sets {
        szz_ivs
            .entry(s.source)
            .or_default()
            .insert(s.issue_key.clone(), szz_iv(s, &p.timeline));
    }

    let estimates = estimate_project(&usable, coldstart)?;
    let labelings = label_defects(&usable, methods, &estimates, &szz_ivs)?;
    let truth = usable.iter().map(ground_truth_labeling).collect::<Result<Vec<_>>>()?;
    Ok(Labeled {
        usable,
        estimates,
        szz_sets,
        labelings,
        truth,
        notices,
    })
}

fn class_matrices(p: &Project, l: &Labeled) -> Result<Vec<DefectivenessMatrix>> {
    let index = CommitIndex::new(&p.commits);
    let touched: BTreeMap<String, BTreeSet<String>> = l
        .usable
        .iter()
        .map(|d| {
            let fixes = d.fix_commits.iter().filter_map(|id| index.get(id));
            (d.issue_key.clone(), touched_classes(fixes, &p.filter))
        })
        .collect();
    let universes = class_universes(p.repo.as_ref(), &p.commits, &p.timeline, p.timeline.len(), &p.filter)?;
    let mut out: Vec<DefectivenessMatrix> = p
        .cfg
        .methods
        .iter()
        .map(|m| {
            let of_method: Vec<AffectedLabeling> =
                l.labelings.iter().filter(|x| x.method == Some(*m)).cloned().collect();
            label_classes(m.name(), &of_method, &touched, &universes)
        })
        .collect();
    out.push(ground_truth_classes(&l.usable, &touched, &universes)?);
    Ok(out)
}

fn project_datasets(p: &Project, matrices: &[DefectivenessMatrix], catalog: &FeatureCatalog) -> Result<Vec<Dataset>> {
    let retained = retained_versions(p.timeline.len());
    let fix_ids: BTreeSet<String> = p.kept.iter().flat_map(|d| d.fix_commits.iter().cloned()).collect();
    let history = ChangeHistory::new(&p.commits, &fix_ids);
    let features = (1..=retained)
        .map(|v| {
            compute_features(p.repo.as_ref(), &p.commits, &history, &p.timeline, v, catalog, &p.filter).map(|rows| (v, rows))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let mut out = Vec::new();
    for m in matrices {
        for r in 1..=retained {
            out.push(build_dataset(&features, catalog, m, r, retained)?);
        }
    }
    Ok(out)
}

fn version_metrics(project: &str, l: &Labeled, methods: &[Method]) -> Result<Vec<MetricsRow>> {
    let truth: BTreeMap<&str, &AffectedLabeling> = l.truth.iter().map(|t| (t.issue_key.as_str(), t)).collect();
    methods
        .iter()
        .map(|m| {
            let mut counts = ConfusionCounts::default();
            for x in l.labelings.iter().filter(|x| x.method == Some(*m)) {
                counts += confusion(&x.affected, &truth[x.issue_key.as_str()].affected)?;
            }
            Ok(metrics_row(project, m.name(), "version", counts))
        })
        .collect()
}

fn class_metrics(project: &str, matrices: &[DefectivenessMatrix]) -> Result<Vec<MetricsRow>> {
    let actual = matrices.iter().find(|m| m.method == ACTUAL).expect("ground-truth matrix");
    let truth: Vec<bool> = actual.entries.values().copied().collect();
    matrices
        .iter()
        .filter(|m| m.method != ACTUAL)
        .map(|m| {
            let predicted: Vec<bool> = actual.entries.keys().map(|k| m.entries.get(k).copied().unwrap_or(false)).collect();
            Ok(metrics_row(project, &m.method, "class", confusion(&predicted, &truth)?))
        })
        .collect()
}

fn feature_metrics(project: &str, selections: &[SelectionResult], catalog_size: usize) -> Result<Vec<MetricsRow>> {
    let actual: BTreeMap<usize, &SelectionResult> =
        selections.iter().filter(|s| s.method == ACTUAL).map(|s| (s.r, s)).collect();
    let mut by_method: BTreeMap<&str, (usize, ConfusionCounts)> = BTreeMap::new();
    let mut order = Vec::new();
    for s in selections.iter().filter(|s| s.method != ACTUAL) {
        let Some(a) = actual.get(&s.r) else { continue };
        let entry = by_method.entry(s.method.as_str()).or_insert_with(|| {
            order.push(s.method.as_str());
            (0, ConfusionCounts::default())
        });
        entry.0 += 1;
        entry.1 += selection_confusion(&s.selected, &a.selected, catalog_size)?;
    }
    Ok(order
        .into_iter()
        .map(|m| metrics_row(project, m, "feature", by_method[m].1))
        .collect())
}

fn metrics_row(project: &str, method: &str, granularity: &str, counts: ConfusionCounts) -> MetricsRow {
    MetricsRow {
        project: project.to_owned(),
        method: method.to_owned(),
        granularity: granularity.to_owned(),
        report: accuracy_metrics(&counts),
        counts,
    }
}

/// Appends a CSV part to `buf`, dropping its header when `buf` already has one.
fn append_part(buf: &mut Vec<u8>, part: &[u8]) {
    if buf.is_empty() {
        buf.extend_from_slice(part);
    } else if let Some(nl) = part.iter().position(|b| *b == b'\n') {
        buf.extend_from_slice(&part[nl + 1..]);
    }
}

fn rq1_record(r: &Rq1Row) -> Vec<String> {
    vec![
        r.project.clone(),
        r.defects.to_string(),
        r.linked.to_string(),
        r.available.to_string(),
        r.consistent.to_string(),
        r.versions.to_string(),
        format_metric(r.pct_available),
        format_metric(r.pct_consistent),
        format_metric(r.pct_unusable()),
    ]
}

fn write_rq1(buf: &mut Vec<u8>, summary: &Rq1Summary) -> Result<usize> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record([
        "project", "defects", "linked", "available", "consistent", "versions", "pct_available", "pct_consistent", "pct_unusable",
    ])?;
    for r in summary.projects.iter().chain(std::iter::once(&summary.totals)) {
        w.write_record(rq1_record(r))?;
    }
    w.flush().map_err(|e| Error::io("rq1", e))?;
    Ok(summary.projects.len() + 1)
}

fn joined(v: impl IntoIterator<Item = usize>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Runs the configured pipeline up to `opts.until`, writing into `opts.out`.
/// On failure the manifest records the failing stage and the error is returned.
pub fn run_pipeline(config: &RunConfig, opts: &RunOptions) -> Result<Manifest> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut out = OutputDir::new(opts.out.clone(), serde_json::to_value(config)?);
    out.metadata("until", opts.until.name());
    out.metadata("enforce_selection", opts.enforce_selection.to_string());
    let mut stage = Stage::Ingest;
    match pool.install(|| run_stages(config, opts, &mut out, &mut stage)) {
        Ok(()) => out.finish(),
        Err(e) => {
            if let Err(write) = out.fail(stage.name(), &e) {
                log::error!("could not write the failure manifest: {write}");
            }
            Err(e)
        }
    }
}

fn run_stages(config: &RunConfig, opts: &RunOptions, out: &mut OutputDir, stage: &mut Stage) -> Result<()> {
    let wants = |s: Stage| s <= opts.until;

    *stage = Stage::Ingest;
    config.validate()?;
    let mut projects = config.projects.par_iter().map(ingest_project).collect::<Result<Vec<_>>>()?;
    out.csv("lifecycle.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "project", "issue_key", "ov", "fv", "fix_time", "fix_commits", "ground_truth_avs", "available", "consistent",
        ])?;
        let mut n = 0;
        for p in &projects {
            for d in &p.kept {
                let u = usability(d);
                w.write_record([
                    p.id().to_owned(),
                    d.issue_key.clone(),
                    d.ov.to_string(),
                    d.fv.to_string(),
                    d.fix_time.to_rfc3339(),
                    d.fix_commits.iter().cloned().collect::<Vec<_>>().join(";"),
                    joined(d.ground_truth_avs.iter().copied()),
                    u.available.to_string(),
                    u.consistent.to_string(),
                ])?;
                n += 1;
            }
        }
        w.flush().map_err(|e| Error::io("lifecycle", e))?;
        Ok(n)
    })?;
    out.csv("skipped_issues.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["project", "issue_key", "reason"])?;
        let mut n = 0;
        for p in &projects {
            for s in &p.parse_skips {
                let key = s.key.clone().unwrap_or_else(|| format!("#{}", s.index));
                w.write_record([p.id(), &key, &s.reason])?;
                n += 1;
            }
            for (key, why) in &p.excluded {
                w.write_record([p.id(), key, why.reason()])?;
                n += 1;
            }
        }
        w.flush().map_err(|e| Error::io("skipped issues", e))?;
        Ok(n)
    })?;
    out.stage_done(Stage::Ingest.name());
    if !wants(Stage::Rq1) {
        return Ok(());
    }

    *stage = Stage::Rq1;
    let summary = rq1_summary(&projects.iter().map(|p| p.counts.clone()).collect::<Vec<_>>());
    out.csv("rq1.csv", |buf| write_rq1(buf, &summary))?;
    let failures: BTreeMap<String, Vec<String>> = summary
        .projects
        .iter()
        .map(|r| (r.project.clone(), config.thresholds.failures(r)))
        .collect();
    out.csv("selection.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["project", "selected", "failures"])?;
        for (p, f) in &failures {
            w.write_record([p.as_str(), &f.is_empty().to_string(), &f.join("; ")])?;
        }
        w.flush().map_err(|e| Error::io("selection", e))?;
        Ok(failures.len())
    })?;
    if opts.enforce_selection {
        let report: Vec<String> = failures
            .iter()
            .filter(|(_, f)| !f.is_empty())
            .map(|(p, f)| format!("{p}: {}", f.join("; ")))
            .collect();
        if report.len() == projects.len() {
            return Err(Error::Config(format!("no project passes the selection thresholds: {}", report.join(" | "))));
        }
        for line in &report {
            out.notice(format!("dropped by selection thresholds: {line}"));
        }
        projects.retain(|p| failures[p.id()].is_empty());
    }
    out.stage_done(Stage::Rq1.name());
    if !wants(Stage::LabelAv) {
        return Ok(());
    }
    let before = projects.len();
    projects.retain(|p| p.kept.iter().any(|d| usability(d).usable()));
    if projects.is_empty() {
        out.notice("no usable defects; labeling, features, selection, evaluation and stability skipped");
        return Ok(());
    }
    if projects.len() < before {
        out.notice(format!("{} projects without usable defects skipped after rq1", before - projects.len()));
    }

    *stage = Stage::LabelAv;
    let mut means = BTreeMap::new();
    for p in &projects {
        if let Some(m) = project_mean_p(&p.usable())? {
            means.insert(p.id().to_owned(), m);
        }
    }
    let mut coldstarts = Vec::new();
    for p in &projects {
        let cs = match config.coldstart_p {
            Some(v) => ProportionEstimate::configured(v),
            None => match coldstart_p(&means, p.id()) {
                Ok(e) => e,
                Err(Error::ColdStartUnavailable(_)) => {
                    out.notice(format!("{}: no other project for ColdStart; using {DEFAULT_COLDSTART_P}", p.id()));
                    ProportionEstimate::configured(DEFAULT_COLDSTART_P)
                }
                Err(e) => return Err(e),
            },
        };
        coldstarts.push(cs);
    }
    let labeled = projects
        .par_iter()
        .zip(coldstarts)
        .map(|(p, cs)| label_project(p, cs))
        .collect::<Result<Vec<_>>>()?;
    for l in &labeled {
        for n in &l.notices {
            out.notice(n.clone());
        }
    }
    out.csv("szz_commits.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["project", "issue_key", "source", "commit", "timestamp", "version"])?;
        let mut n = 0;
        for (p, l) in projects.iter().zip(&labeled) {
            for s in &l.szz_sets {
                for (id, t) in &s.commits {
                    let v = p.timeline.version_of_timestamp(*t).map_or("NA".into(), |v| v.to_string());
                    w.write_record([p.id(), &s.issue_key, &format!("{:?}", s.source), id, &t.to_rfc3339(), &v])?;
                    n += 1;
                }
            }
        }
        w.flush().map_err(|e| Error::io("szz commits", e))?;
        Ok(n)
    })?;
    out.csv("proportions.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["project", "issue_key", "estimator", "p", "source", "support"])?;
        let mut n = 0;
        for (p, l) in projects.iter().zip(&labeled) {
            for d in &l.usable {
                let e = &l.estimates;
                for (name, est) in [
                    ("ColdStart", &e.coldstart),
                    ("Increment", &e.increment[&d.issue_key]),
                    ("MovingWindow", &e.window[&d.issue_key]),
                ] {
                    w.write_record([
                        p.id(),
                        &d.issue_key,
                        name,
                        &est.value.to_string(),
                        &format!("{:?}", est.source),
                        &est.support.to_string(),
                    ])?;
                    n += 1;
                }
            }
        }
        w.flush().map_err(|e| Error::io("proportions", e))?;
        Ok(n)
    })?;
    out.csv("av_labels.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["project", "issue_key", "method", "ov", "fv", "iv", "affected_versions"])?;
        let mut n = 0;
        for (p, l) in projects.iter().zip(&labeled) {
            let by_key: BTreeMap<&str, &DefectLifecycle> = l.usable.iter().map(|d| (d.issue_key.as_str(), d)).collect();
            for x in l.labelings.iter().chain(&l.truth) {
                let d = by_key[x.issue_key.as_str()];
                w.write_record([
                    p.id().to_owned(),
                    x.issue_key.clone(),
                    x.method_name().to_owned(),
                    d.ov.to_string(),
                    d.fv.to_string(),
                    x.iv.map_or("NA".into(), |v| v.to_string()),
                    joined(x.affected_versions()),
                ])?;
                n += 1;
            }
        }
        w.flush().map_err(|e| Error::io("av labels", e))?;
        Ok(n)
    })?;
    out.stage_done(Stage::LabelAv.name());
    if !wants(Stage::LabelClasses) {
        return Ok(());
    }

    *stage = Stage::LabelClasses;
    let matrices = projects
        .par_iter()
        .zip(&labeled)
        .map(|(p, l)| class_matrices(p, l))
        .collect::<Result<Vec<_>>>()?;
    out.csv("class_labels.csv", |buf| {
        let mut n = 0;
        for (p, m) in projects.iter().zip(&matrices) {
            let mut part = Vec::new();
            n += write_class_labels(&mut part, p.id(), m)?;
            append_part(buf, &part);
        }
        Ok(n)
    })?;
    out.stage_done(Stage::LabelClasses.name());
    if !wants(Stage::Features) {
        return Ok(());
    }

    *stage = Stage::Features;
    let catalog = match &config.catalog {
        Some(path) => FeatureCatalog::from_csv(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)?,
        None => FeatureCatalog::default(),
    };
    let datasets = projects
        .par_iter()
        .zip(&matrices)
        .map(|(p, m)| project_datasets(p, m, &catalog))
        .collect::<Result<Vec<_>>>()?;
    for (p, ds) in projects.iter().zip(&datasets) {
        if ds.is_empty() {
            out.notice(format!("{}: fewer than two versions; no datasets", p.id()));
        }
        for d in ds {
            out.csv(&format!("datasets/{}/{}_R{}.csv", p.id(), d.method, d.r), |buf| write_dataset(buf, d))?;
        }
    }
    out.stage_done(Stage::Features.name());
    if !wants(Stage::SelectFeatures) {
        return Ok(());
    }

    *stage = Stage::SelectFeatures;
    let mut selections: Vec<Vec<SelectionResult>> = Vec::with_capacity(projects.len());
    for (p, ds) in projects.iter().zip(&datasets) {
        let mut results = Vec::new();
        for d in ds {
            if d.rows.len() < 2 {
                out.notice(format!("{}: {} R{} has fewer than two rows; not selected", p.id(), d.method, d.r));
                continue;
            }
            results.push(exhaustive_search(d, config.catalog_limit)?);
        }
        selections.push(results);
    }
    out.csv("selections.csv", |buf| {
        let mut n = 0;
        for (p, s) in projects.iter().zip(&selections) {
            let mut part = Vec::new();
            n += write_selections(&mut part, p.id(), s)?;
            append_part(buf, &part);
        }
        Ok(n)
    })?;
    let catalog_names: Vec<String> = catalog.names().into_iter().map(str::to_owned).collect();
    out.csv("selection_frequency.csv", |buf| {
        let mut n = 0;
        write_frequencies(&mut *buf, "", "", &BTreeMap::new())?;
        for (p, s) in projects.iter().zip(&selections) {
            let mut methods: Vec<&str> = Vec::new();
            for r in s {
                if !methods.contains(&r.method.as_str()) {
                    methods.push(&r.method);
                }
            }
            for m in methods {
                let of: Vec<SelectionResult> = s.iter().filter(|r| r.method == m).cloned().collect();
                let mut part = Vec::new();
                n += write_frequencies(&mut part, p.id(), m, &selection_frequency(&of, &catalog_names))?;
                append_part(buf, &part);
            }
        }
        Ok(n)
    })?;
    out.stage_done(Stage::SelectFeatures.name());
    if !wants(Stage::Evaluate) {
        return Ok(());
    }

    *stage = Stage::Evaluate;
    let mut rows = Vec::new();
    for (((p, l), m), s) in projects.iter().zip(&labeled).zip(&matrices).zip(&selections) {
        rows.extend(version_metrics(p.id(), l, &p.cfg.methods)?);
        rows.extend(class_metrics(p.id(), m)?);
        rows.extend(feature_metrics(p.id(), s, catalog.len())?);
    }
    rows.sort_by(|a, b| {
        let gran = |g: &str| ["version", "class", "feature"].iter().position(|x| *x == g);
        (gran(&a.granularity), &a.project).cmp(&(gran(&b.granularity), &b.project))
    });
    out.csv("metrics.csv", |buf| write_metrics(buf, &rows))?;
    let used: BTreeSet<Method> = projects.iter().flat_map(|p| p.cfg.methods.iter().copied()).collect();
    let order: Vec<String> = Method::ALL.iter().filter(|m| used.contains(m)).map(|m| m.name().to_owned()).collect();
    let mut comparisons: Vec<Comparison> = Vec::new();
    for gran in ["version", "class", "feature"] {
        for metric in Metric::ALL {
            comparisons.push(compare_methods(&rows, gran, metric, &order)?);
        }
    }
    out.csv("pairwise.csv", |buf| write_pairwise(buf, &comparisons))?;
    out.csv("rank_tables.csv", |buf| write_rank_tables(buf, &comparisons))?;
    out.stage_done(Stage::Evaluate.name());
    if !wants(Stage::Stability) {
        return Ok(());
    }

    *stage = Stage::Stability;
    let input: Vec<(String, Vec<DefectLifecycle>)> =
        projects.iter().zip(&labeled).map(|(p, l)| (p.id().to_owned(), l.usable.clone())).collect();
    let report = stability_report(&input)?;
    out.csv("stability.csv", |buf| write_stability(buf, &report))?;
    out.metadata(
        "median_within_project_stdv_p",
        format_metric(report.median_within_p),
    );
    out.stage_done(Stage::Stability.name());
    Ok(())
}
