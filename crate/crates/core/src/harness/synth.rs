//! Seeded synthetic projects whose defect life cycles are known by
//! construction: an issue export, a linear commit history with planted
//! defect-introducing and fixing commits, a version list, external SZZ rows
//! and the oracle labels.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::output::atomic_write;
use crate::error::{Error, Result};
use crate::vcs::{CommitLog, LoggedCommit};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Issue-key prefix and configuration section name.
    pub project: String,
    pub versions: usize,
    pub defects: usize,
    pub classes: usize,
    pub seed: u64,
    /// Generate every defect with exactly this proportion.
    pub constant_p: Option<f64>,
    pub unavailable_fraction: f64,
    pub inconsistent_fraction: f64,
    pub noise_commits: usize,
    /// Largest fixing version; defaults to the last version.
    pub max_fv: Option<usize>,
    pub interval_days: i64,
}

impl SyntheticSpec {
    pub fn new(project: &str, versions: usize, defects: usize, classes: usize, seed: u64) -> Self {
        SyntheticSpec {
            project: project.to_owned(),
            versions,
            defects,
            classes,
            seed,
            constant_p: None,
            unavailable_fraction: 0.0,
            inconsistent_fraction: 0.0,
            noise_commits: 2 * versions,
            max_fv: None,
            interval_days: 30,
        }
    }

    fn check(&self) -> Result<usize> {
        let bad = |m: &str| Err(Error::Invalid(format!("infeasible synthetic spec: {m}")));
        if self.versions < 2 {
            return bad("at least two versions are needed");
        }
        if self.classes == 0 {
            return bad("at least one class is needed");
        }
        let max_fv = self.max_fv.unwrap_or(self.versions);
        if max_fv > self.versions {
            return bad("maximum fixing version exceeds the version count");
        }
        if max_fv < 2 {
            return bad("maximum fixing version must be at least 2");
        }
        let f = [self.unavailable_fraction, self.inconsistent_fraction];
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || f.iter().sum::<f64>() > 1.0 {
            return bad("fractions must lie in [0, 1] and sum to at most 1");
        }
        if self.inconsistent_fraction > 0.0 && max_fv < 3 {
            return bad("inconsistent defects need a fixing version of at least 3");
        }
        if self.constant_p.is_some_and(|p| !(p.is_finite() && p >= 1.0)) {
            return bad("a constant proportion must be at least 1 for consistent defects");
        }
        if self.interval_days < 1 {
            return bad("release interval must be at least one day");
        }
        Ok(max_fv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    Consistent,
    Unavailable,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleDefect {
    pub issue_key: String,
    pub true_iv: usize,
    pub ov: usize,
    pub fv: usize,
    pub truth: Truth,
    /// Affected versions listed in the issue export.
    pub listed_avs: Vec<usize>,
    /// Brute-force expansion of the listed versions over `1..=fv`.
    pub affected: Vec<bool>,
    /// Planted introducing commits, oldest first.
    pub planted_commits: Vec<String>,
    pub fix_commits: Vec<String>,
    pub touched: BTreeSet<String>,
}

impl OracleDefect {
    pub fn true_p(&self) -> f64 {
        (self.fv - self.true_iv) as f64 / (self.fv as f64 - self.ov as f64).max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticProject {
    pub spec: SyntheticSpec,
    pub issues_json: String,
    pub log: CommitLog,
    pub versions_csv: String,
    /// `issue_key,introducing_commit_hash,source` rows keyed by log commit id.
    pub szz_rows: Vec<(String, String, String)>,
    pub oracle: Vec<OracleDefect>,
    pub release_dates: Vec<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepoMode {
    /// A JSON commit log file.
    Log,
    /// A real git repository built with the git CLI.
    Git,
}

fn version_name(v: usize) -> String {
    format!("{v}.0")
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Initial,
    Intro(usize),
    /// A later commit adding more lines the fix will remove.
    ExtraIntro(usize),
    FollowUp(usize),
    Fix(usize),
    Noise,
}

struct Plan {
    iv: usize,
    ov: usize,
    fv: usize,
    truth: Truth,
    class: usize,
    follow_class: Option<usize>,
    bug_lines: usize,
    extra_intro: bool,
    created: DateTime<Utc>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: DateTime<Utc>, hi: DateTime<Utc>) -> DateTime<Utc> {
    let span = (hi - lo).num_seconds().max(1);
    lo + Duration::seconds(rng.gen_range(0..span))
}

fn commit_id(rng: &mut ChaCha8Rng) -> String {
    format!("{:016x}{:016x}{:08x}", rng.gen::<u64>(), rng.gen::<u64>(), rng.gen::<u32>())
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticProject> {
    let max_fv = spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap();
    let release = |v: usize| base + Duration::days(spec.interval_days * v as i64);
    let hour = Duration::hours(1);

    let n = spec.defects;
    let n_unavail = (n as f64 * spec.unavailable_fraction).round() as usize;
    let n_incons = ((n as f64 * spec.inconsistent_fraction).round() as usize).min(n - n_unavail);
    let mut kinds: Vec<Truth> = (0..n)
        .map(|i| {
            if i < n_unavail {
                Truth::Unavailable
            } else if i < n_unavail + n_incons {
                Truth::Inconsistent
            } else {
                Truth::Consistent
            }
        })
        .collect();
    kinds.shuffle(&mut rng);

    let mut plans = Vec::with_capacity(n);
    for truth in kinds {
        let mut found = None;
        for _ in 0..10_000 {
            let fv = rng.gen_range(2..=max_fv);
            let ov = rng.gen_range(1..fv);
            let iv = match spec.constant_p {
                Some(p) => {
                    let x = fv as f64 - p * (fv - ov) as f64;
                    if (x - x.round()).abs() > 1e-9 || x.round() < 1.0 {
                        continue;
                    }
                    x.round() as usize
                }
                None => rng.gen_range(1..=ov),
            };
            if iv > ov || (truth == Truth::Inconsistent && ov + 2 > fv) {
                continue;
            }
            found = Some((iv, ov, fv));
            break;
        }
        let (iv, ov, fv) = found.ok_or_else(|| Error::Invalid("infeasible synthetic spec: no life cycle fits the constraints".into()))?;
        let class = rng.gen_range(0..spec.classes);
        let follow_class = (spec.classes > 1 && rng.gen_bool(0.3)).then(|| {
            let other = rng.gen_range(0..spec.classes - 1);
            if other >= class {
                other + 1
            } else {
                other
            }
        });
        let created = uniform(&mut rng, release(ov) + hour, release(ov + 1) - hour * 3);
        plans.push(Plan {
            iv,
            ov,
            fv,
            truth,
            class,
            follow_class,
            bug_lines: rng.gen_range(1..=2),
            extra_intro: rng.gen_bool(0.3),
            created,
        });
    }

    let mut events: Vec<(DateTime<Utc>, Event)> = vec![(base + hour, Event::Initial)];
    for (d, p) in plans.iter().enumerate() {
        let lo = if p.iv == 1 { base + hour * 2 } else { release(p.iv - 1) + hour * 2 };
        let intro = uniform(&mut rng, lo, release(p.iv) - hour * 2);
        events.push((intro, Event::Intro(d)));
        if p.extra_intro {
            events.push((uniform(&mut rng, intro + hour, p.created - hour), Event::ExtraIntro(d)));
        }
        let fix_lo = p.created.max(release(p.fv - 1)) + hour;
        let fix = uniform(&mut rng, fix_lo + hour, release(p.fv) - hour);
        events.push((fix, Event::Fix(d)));
        if p.follow_class.is_some() {
            events.push((uniform(&mut rng, fix_lo, fix - Duration::seconds(1)), Event::FollowUp(d)));
        }
    }
    for _ in 0..spec.noise_commits {
        events.push((uniform(&mut rng, base + hour * 2, release(spec.versions)), Event::Noise));
    }
    events.sort_by_key(|(t, _)| *t);
    for i in 1..events.len() {
        if events[i].0 <= events[i - 1].0 {
            events[i].0 = events[i - 1].0 + Duration::seconds(1);
        }
    }

    let class_path = |c: usize| format!("src/main/java/org/syn/C{c:02}.java");
    let mut files: Vec<Vec<String>> = (0..spec.classes)
        .map(|c| {
            let mut lines = vec![format!("public class C{c:02} {{")];
            lines.extend((0..4).map(|k| format!("    int f{k} = {};", c * 10 + k)));
            lines.push("}".into());
            lines
        })
        .collect();
    let mut readme = 0usize;
    let mut noise_counter = 0usize;
    let authors = ["alice", "bob", "carol", "dave"];
    let mut commits: Vec<LoggedCommit> = Vec::new();
    let mut planted: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut fix_ids: Vec<Vec<String>> = vec![Vec::new(); n];
    let key = |d: usize| format!("{}-{}", spec.project, d + 1);

    for (ts, event) in events {
        let id = commit_id(&mut rng);
        let author = authors[rng.gen_range(0..authors.len())].to_owned();
        let mut changed: BTreeSet<usize> = BTreeSet::new();
        let mut extra: BTreeMap<String, Option<String>> = BTreeMap::new();
        let message = match event {
            Event::Initial => {
                changed.extend(0..spec.classes);
                extra.insert("README.md".into(), Some("synthetic project\n".into()));
                "Initial import".to_owned()
            }
            Event::Intro(d) => {
                let p = &plans[d];
                let body = &mut files[p.class];
                for k in 0..p.bug_lines {
                    let at = rng.gen_range(1..body.len());
                    body.insert(at, format!("    bug_{}_{}();", key(d).replace('-', "_"), k));
                }
                changed.insert(p.class);
                planted[d].push(id.clone());
                format!("Extend C{:02}", p.class)
            }
            Event::ExtraIntro(d) => {
                let p = &plans[d];
                let body = &mut files[p.class];
                let at = rng.gen_range(1..body.len());
                body.insert(at, format!("    bug_{}_x();", key(d).replace('-', "_")));
                changed.insert(p.class);
                planted[d].push(id.clone());
                format!("Tune C{:02}", p.class)
            }
            Event::FollowUp(d) => {
                let c = plans[d].follow_class.expect("follow-up class");
                let body = &mut files[c];
                let at = rng.gen_range(1..body.len());
                body.insert(at, format!("    guard_{}();", key(d).replace('-', "_")));
                changed.insert(c);
                fix_ids[d].push(id.clone());
                format!("{}: add guard", key(d))
            }
            Event::Fix(d) => {
                let p = &plans[d];
                let marker = format!("bug_{}_", key(d).replace('-', "_"));
                let body = &mut files[p.class];
                let at = body.iter().position(|l| l.contains(&marker)).expect("planted line present");
                body.retain(|l| !l.contains(&marker));
                body.insert(at.min(body.len() - 1), format!("    fixed_{}();", key(d).replace('-', "_")));
                changed.insert(p.class);
                fix_ids[d].push(id.clone());
                format!("{} fix defect in C{:02}", key(d), p.class)
            }
            Event::Noise => {
                for _ in 0..rng.gen_range(1..=2usize.min(spec.classes)) {
                    let c = rng.gen_range(0..spec.classes);
                    let body = &mut files[c];
                    if rng.gen_bool(0.3) {
                        if let Some(pos) = body.iter().position(|l| l.contains("noise_")) {
                            body.remove(pos);
                        }
                    }
                    for _ in 0..rng.gen_range(1..=3) {
                        let at = rng.gen_range(1..body.len());
                        noise_counter += 1;
                        body.insert(at, format!("    noise_{noise_counter}();"));
                    }
                    changed.insert(c);
                }
                if rng.gen_bool(0.2) {
                    readme += 1;
                    extra.insert("README.md".into(), Some(format!("synthetic project\nrevision {readme}\n")));
                }
                "Routine maintenance".to_owned()
            }
        };
        let mut file_map = extra;
        for c in changed {
            file_map.insert(class_path(c), Some(files[c].join("\n") + "\n"));
        }
        commits.push(LoggedCommit {
            parents: commits.last().map(|c| vec![c.id.clone()]).unwrap_or_default(),
            id,
            author,
            timestamp: ts,
            message,
            files: file_map,
        });
    }

    let mut oracle = Vec::with_capacity(n);
    let mut issues = Vec::with_capacity(n + 2);
    for (d, p) in plans.iter().enumerate() {
        let listed: Vec<usize> = match p.truth {
            Truth::Consistent => (p.iv..p.fv).collect(),
            Truth::Unavailable => Vec::new(),
            Truth::Inconsistent => (p.ov + 1..p.fv).collect(),
        };
        let affected = match listed.iter().min() {
            Some(&first) => (1..=p.fv).map(|v| v >= first && v < p.fv).collect(),
            None => vec![false; p.fv],
        };
        let mut touched: BTreeSet<String> = [class_path(p.class)].into();
        touched.extend(p.follow_class.map(class_path));
        issues.push(json!({
            "key": key(d),
            "fields": {
                "issuetype": {"name": "Bug"},
                "status": {"name": if d % 2 == 0 { "Closed" } else { "Resolved" }},
                "resolution": {"name": "Fixed"},
                "created": p.created.format("%Y-%m-%dT%H:%M:%S%.3f%z").to_string(),
                "versions": listed.iter().map(|v| json!({"name": version_name(*v)})).collect::<Vec<_>>(),
                "fixVersions": [{"name": version_name(p.fv)}],
            }
        }));
        oracle.push(OracleDefect {
            issue_key: key(d),
            true_iv: p.iv,
            ov: p.ov,
            fv: p.fv,
            truth: p.truth,
            listed_avs: listed,
            affected,
            planted_commits: planted[d].clone(),
            fix_commits: fix_ids[d].clone(),
            touched,
        });
    }
    for extra in 0..2 {
        issues.push(json!({
            "key": format!("{}-{}", spec.project, n + extra + 1),
            "fields": {
                "issuetype": {"name": "Improvement"},
                "status": {"name": "Closed"},
                "resolution": {"name": "Fixed"},
                "created": (base + Duration::days(3)).to_rfc3339(),
                "versions": [],
                "fixVersions": [],
            }
        }));
    }

    let release_dates: Vec<DateTime<Utc>> = (1..=spec.versions).map(release).collect();
    let mut versions_csv = String::from("name,release_date,released\n");
    for (i, d) in release_dates.iter().enumerate() {
        versions_csv.push_str(&format!("{},{},true\n", version_name(i + 1), d.to_rfc3339()));
    }
    versions_csv.push_str(&format!("{},,false\n", version_name(spec.versions + 1)));

    let initial = commits[0].id.clone();
    let mut szz_rows = Vec::new();
    for o in &oracle {
        for c in &o.planted_commits {
            szz_rows.push((o.issue_key.clone(), c.clone(), "U".to_owned()));
        }
        if rng.gen_bool(0.3) {
            szz_rows.push((o.issue_key.clone(), initial.clone(), "U".to_owned()));
        }
        if rng.gen_bool(0.8) {
            let c = &o.planted_commits[rng.gen_range(0..o.planted_commits.len())];
            szz_rows.push((o.issue_key.clone(), c.clone(), "RA".to_owned()));
        }
    }

    Ok(SyntheticProject {
        spec: spec.clone(),
        issues_json: serde_json::to_string_pretty(&issues)? + "\n",
        log: CommitLog { commits },
        versions_csv,
        szz_rows,
        oracle,
        release_dates,
    })
}

fn git(dir: &Path, args: &[&str], env: &[(&str, String)]) -> Result<String> {
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(args)
        .envs(env.iter().map(|(k, v)| (*k, v.as_str())))
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .output()
        .map_err(|e| Error::Git {
            command: args.join(" "),
            message: e.to_string(),
        })?;
    if !out.status.success() {
        return Err(Error::Git {
            command: args.join(" "),
            message: String::from_utf8_lossy(&out.stderr).trim().to_owned(),
        });
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_owned())
}

/// Replays a linear commit log into a fresh git repository at `dir` and
/// returns the log-id to git-hash mapping.
pub fn materialize_git(log: &CommitLog, dir: &Path) -> Result<BTreeMap<String, String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    git(dir, &["init", "-q", "-b", "main"], &[])?;
    let mut ids = BTreeMap::new();
    for c in &log.commits {
        if c.parents.len() > 1 {
            return Err(Error::Invalid(format!("commit {} is a merge; only linear logs can be materialized", c.id)));
        }
        for (path, content) in &c.files {
            let target = dir.join(path);
            match content {
                Some(text) => {
                    if let Some(parent) = target.parent() {
                        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                    }
                    std::fs::write(&target, text).map_err(|e| Error::io(&target, e))?;
                }
                None => {
                    if target.exists() {
                        std::fs::remove_file(&target).map_err(|e| Error::io(&target, e))?;
                    }
                }
            }
        }
        git(dir, &["add", "-A"], &[])?;
        let date = c.timestamp.to_rfc3339();
        let email = format!("{}@example.org", c.author);
        let env = [
            ("GIT_AUTHOR_NAME", c.author.clone()),
            ("GIT_AUTHOR_EMAIL", email.clone()),
            ("GIT_AUTHOR_DATE", date.clone()),
            ("GIT_COMMITTER_NAME", c.author.clone()),
            ("GIT_COMMITTER_EMAIL", email),
            ("GIT_COMMITTER_DATE", date),
        ];
        git(dir, &["commit", "-q", "--allow-empty", "--no-verify", "-m", &c.message], &env)?;
        ids.insert(c.id.clone(), git(dir, &["rev-parse", "HEAD"], &[])?);
    }
    Ok(ids)
}

impl SyntheticProject {
    /// Writes the project's inputs, the oracle and a run configuration into
    /// `dir`; returns the configuration path.
    pub fn write(&self, dir: &Path, mode: RepoMode) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (repo_entry, ids) = match mode {
            RepoMode::Log => {
                let mut json = serde_json::to_vec_pretty(&self.log)?;
                json.push(b'\n');
                atomic_write(&dir.join("commits.json"), &json)?;
                ("commits.json", None)
            }
            RepoMode::Git => ("repo", Some(materialize_git(&self.log, &dir.join("repo"))?)),
        };
        let map = |id: &str| ids.as_ref().map_or_else(|| id.to_owned(), |m| m[id].clone());

        atomic_write(&dir.join("issues.json"), self.issues_json.as_bytes())?;
        atomic_write(&dir.join("versions.csv"), self.versions_csv.as_bytes())?;

        let mut szz = csv::Writer::from_writer(Vec::new());
        szz.write_record(["issue_key", "introducing_commit_hash", "source"])?;
        for (k, c, s) in &self.szz_rows {
            szz.write_record([k.as_str(), &map(c), s])?;
        }
        atomic_write(&dir.join("szz_external.csv"), &szz.into_inner().map_err(|e| Error::io("szz", e.into_error()))?)?;

        let mut oracle = csv::Writer::from_writer(Vec::new());
        oracle.write_record([
            "issue_key", "true_iv", "ov", "fv", "p", "truth", "listed_avs", "affected_versions", "planted_commits", "fix_commits", "touched",
        ])?;
        for o in &self.oracle {
            let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(";");
            let affected: Vec<usize> = (1..=o.fv).filter(|v| o.affected[v - 1]).collect();
            oracle.write_record([
                o.issue_key.clone(),
                o.true_iv.to_string(),
                o.ov.to_string(),
                o.fv.to_string(),
                o.true_p().to_string(),
                format!("{:?}", o.truth).to_lowercase(),
                join(&o.listed_avs),
                join(&affected),
                o.planted_commits.iter().map(|c| map(c)).collect::<Vec<_>>().join(";"),
                o.fix_commits.iter().map(|c| map(c)).collect::<Vec<_>>().join(";"),
                o.touched.iter().cloned().collect::<Vec<_>>().join(";"),
            ])?;
        }
        atomic_write(&dir.join("oracle.csv"), &oracle.into_inner().map_err(|e| Error::io("oracle", e.into_error()))?)?;

        let conf = format!(
            "[{}]\nissues = issues.json\nrepo = {repo_entry}\nversions = versions.csv\nszz_import = szz_external.csv\n",
            self.spec.project
        );
        let path = dir.join("project.conf");
        atomic_write(&path, conf.as_bytes())?;
        Ok(path)
    }
}
