//! Plain-text run configuration.
//!
//! ```text
//! out = results
//! coldstart_p = 1.8089
//!
//! [QPID]
//! issues = qpid/issues.json
//! repo = qpid/repo
//! versions = qpid/versions.csv
//! exclude = ^0\.(19|21)$
//! szz_import = qpid/szz.csv
//! ```
//!
//! Keys before the first section apply to the whole run and provide defaults
//! for `extensions`, `methods`, `exclude` and `branch`. Relative paths are
//! resolved against the configuration file's directory.

use std::path::{Path, PathBuf};

use regex::Regex;
use serde::Serialize;

use crate::avlabel::Method;
use crate::classlabel::ExtensionFilter;
use crate::error::{Error, Result};
use crate::fselect::DEFAULT_CATALOG_LIMIT;
use crate::lifecycle::SelectionThresholds;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectConfig {
    pub id: String,
    pub issues: PathBuf,
    /// A git working tree, or a JSON commit log file.
    pub repo: PathBuf,
    /// `.json` for the tracker's version list, anything else is read as CSV.
    pub versions: PathBuf,
    pub exclude: Vec<String>,
    pub extensions: Vec<String>,
    pub methods: Vec<Method>,
    pub branch: Option<String>,
    pub szz_import: Option<PathBuf>,
}

impl ProjectConfig {
    pub fn exclusion_patterns(&self) -> Result<Vec<Regex>> {
        self.exclude
            .iter()
            .map(|p| Regex::new(p).map_err(|e| Error::Config(format!("{}: bad exclusion pattern {p:?}: {e}", self.id))))
            .collect()
    }

    pub fn filter(&self) -> ExtensionFilter {
        ExtensionFilter::new(self.extensions.iter().cloned())
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("issues", &self.issues), ("repo", &self.repo), ("versions", &self.versions)] {
            if !p.exists() {
                return Err(Error::Config(format!("{}: {what} path {} does not exist", self.id, p.display())));
            }
        }
        if let Some(p) = &self.szz_import {
            if !p.exists() {
                return Err(Error::Config(format!("{}: szz_import path {} does not exist", self.id, p.display())));
            }
        }
        let needs_import = self
            .methods
            .iter()
            .any(|m| m.szz_source().is_some_and(|s| s != crate::szz::SzzSource::Basic));
        if needs_import && self.szz_import.is_none() {
            return Err(Error::Config(format!("{}: SZZ_U/SZZ_RA methods need szz_import", self.id)));
        }
        self.exclusion_patterns()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub projects: Vec<ProjectConfig>,
    pub out: Option<PathBuf>,
    /// Replaces the cross-project ColdStart median when set.
    pub coldstart_p: Option<f64>,
    pub catalog: Option<PathBuf>,
    pub catalog_limit: usize,
    #[serde(skip)]
    pub thresholds: SelectionThresholds,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut global: Vec<(usize, String, String)> = Vec::new();
        let mut sections: Vec<(String, Vec<(usize, String, String)>)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() || sections.iter().any(|(s, _)| s == name) {
                    return Err(Error::Config(format!("line {}: empty or repeated section [{name}]", n + 1)));
                }
                sections.push((name.to_owned(), Vec::new()));
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let entry = (n + 1, k.trim().to_owned(), v.trim().to_owned());
            match sections.last_mut() {
                Some((_, kv)) => kv.push(entry),
                None => global.push(entry),
            }
        }

        let mut out = None;
        let mut coldstart_p = None;
        let mut catalog = None;
        let mut catalog_limit = DEFAULT_CATALOG_LIMIT;
        let mut thresholds = SelectionThresholds::default();
        let mut defaults = Defaults::default();
        for (n, k, v) in &global {
            let bad = |e: String| Error::Config(format!("line {n}: {k}: {e}"));
            match k.as_str() {
                "out" => out = Some(resolve(v)),
                "coldstart_p" => coldstart_p = Some(parse_num::<f64>(v).map_err(bad)?),
                "catalog" => catalog = Some(resolve(v)),
                "catalog_limit" => catalog_limit = parse_num(v).map_err(bad)?,
                "min_usable_defects" => thresholds.min_usable_defects = parse_num(v).map_err(bad)?,
                "min_versions" => thresholds.min_versions = parse_num(v).map_err(bad)?,
                "min_pct_usable" => thresholds.min_pct_usable = parse_num(v).map_err(bad)?,
                _ if defaults.set(k, v)? => {}
                _ => return Err(Error::Config(format!("line {n}: unknown global key {k:?}"))),
            }
        }
        if coldstart_p.is_some_and(|p: f64| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::Config("coldstart_p must be a nonnegative number".into()));
        }

        let mut projects = Vec::new();
        for (id, kv) in sections {
            let mut local = defaults.clone();
            let (mut issues, mut repo, mut versions, mut szz_import) = (None, None, None, None);
            for (n, k, v) in &kv {
                match k.as_str() {
                    "issues" => issues = Some(resolve(v)),
                    "repo" => repo = Some(resolve(v)),
                    "versions" => versions = Some(resolve(v)),
                    "szz_import" => szz_import = Some(resolve(v)),
                    _ if local.set(k, v)? => {}
                    _ => return Err(Error::Config(format!("line {n}: unknown key {k:?} in [{id}]"))),
                }
            }
            let need = |v: Option<PathBuf>, k: &str| v.ok_or_else(|| Error::Config(format!("[{id}] lacks {k}")));
            let methods = match local.methods {
                Some(m) => m,
                None if szz_import.is_some() => Method::ALL.to_vec(),
                None => Method::ALL.iter().copied().filter(|m| m.szz_source().is_none_or(|s| s == crate::szz::SzzSource::Basic)).collect(),
            };
            projects.push(ProjectConfig {
                issues: need(issues, "issues")?,
                repo: need(repo, "repo")?,
                versions: need(versions, "versions")?,
                exclude: local.exclude,
                extensions: local.extensions.unwrap_or_else(|| vec![".java".into()]),
                methods,
                branch: local.branch,
                szz_import,
                id,
            });
        }
        if projects.is_empty() {
            return Err(Error::Config("configuration defines no [project] section".into()));
        }
        Ok(RunConfig {
            projects,
            out,
            coldstart_p,
            catalog,
            catalog_limit,
            thresholds,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.projects {
            p.validate()?;
        }
        if let Some(c) = &self.catalog {
            if !c.exists() {
                return Err(Error::Config(format!("catalog {} does not exist", c.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Defaults {
    exclude: Vec<String>,
    extensions: Option<Vec<String>>,
    methods: Option<Vec<Method>>,
    branch: Option<String>,
}

impl Defaults {
    /// Applies a key shared by global and project scope; `false` if unknown.
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "exclude" => self.exclude.push(value.to_owned()),
            "extensions" => self.extensions = Some(list(value)),
            "branch" => self.branch = Some(value.to_owned()),
            "methods" => {
                self.methods = Some(if value.eq_ignore_ascii_case("all") {
                    Method::ALL.to_vec()
                } else {
                    list(value).iter().map(|m| m.parse()).collect::<Result<_>>()?
                })
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("not a number: {v:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_defaults_and_paths() {
        let text = "\
# run
out = results
coldstart_p = 2.5
extensions = .java, .kt
exclude = ^0\\.19$

[QPID]
issues = q/issues.json
repo = /abs/repo
versions = q/versions.csv
exclude = ^0\\.21$
szz_import = q/szz.csv

[WICKET]
issues = w/i.json
repo = w/log.json
versions = w/v.json
methods = Simple, SZZ_B+
";
        let cfg = RunConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.out, Some(PathBuf::from("/base/results")));
        assert_eq!(cfg.coldstart_p, Some(2.5));
        let q = &cfg.projects[0];
        assert_eq!(q.id, "QPID");
        assert_eq!(q.repo, PathBuf::from("/abs/repo"));
        assert_eq!(q.issues, PathBuf::from("/base/q/issues.json"));
        assert_eq!(q.exclude, vec!["^0\\.19$", "^0\\.21$"]);
        assert_eq!(q.extensions, vec![".java", ".kt"]);
        assert_eq!(q.methods.len(), 10);
        let w = &cfg.projects[1];
        assert_eq!(w.methods, vec![Method::Simple, Method::SzzBPlus]);
        assert_eq!(w.exclude, vec!["^0\\.19$"]);
    }

    #[test]
    fn default_methods_skip_imports() {
        let cfg = RunConfig::parse("[P]\nissues=a\nrepo=b\nversions=c\n", Path::new(".")).unwrap();
        assert_eq!(cfg.projects[0].methods.len(), 6);
        assert!(!cfg.projects[0].methods.contains(&Method::SzzU));
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(RunConfig::parse("", base).is_err());
        assert!(RunConfig::parse("[P]\nissues=a\nrepo=b\n", base).is_err());
        assert!(RunConfig::parse("[P]\nissues=a\nrepo=b\nversions=c\ncolour=red\n", base).is_err());
        assert!(RunConfig::parse("[P]\nissues=a\nrepo=b\nversions=c\nmethods=Magic\n", base).is_err());
        assert!(RunConfig::parse("coldstart_p = x\n[P]\nissues=a\nrepo=b\nversions=c\n", base).is_err());
        assert!(RunConfig::parse("[P]\nissues=a\nrepo=b\nversions=c\n[P]\n", base).is_err());
    }

    #[test]
    fn validation_checks_paths_and_imports() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["i.json", "v.csv", "log.json"] {
            std::fs::write(dir.path().join(f), "[]").unwrap();
        }
        let cfg = RunConfig::parse("[P]\nissues=i.json\nrepo=log.json\nversions=v.csv\n", dir.path()).unwrap();
        cfg.validate().unwrap();
        let cfg = RunConfig::parse("[P]\nissues=i.json\nrepo=log.json\nversions=v.csv\nmethods=SZZ_U\n", dir.path()).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::parse("[P]\nissues=missing.json\nrepo=log.json\nversions=v.csv\n", dir.path()).unwrap();
        assert!(cfg.validate().is_err());
    }
}
