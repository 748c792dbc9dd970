#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use avmine::harness::{run_pipeline, Manifest, RepoMode, RunConfig, RunOptions, Stage, SyntheticProject};

/// Writes each project under `dir/<id>/` and a combined configuration at
/// `dir/run.conf` with `global` prepended.
pub fn write_run(dir: &Path, projects: &[&SyntheticProject], mode: RepoMode, global: &str) -> PathBuf {
    let mut conf = String::from(global);
    conf.push('\n');
    for p in projects {
        let id = &p.spec.project;
        p.write(&dir.join(id), mode).unwrap();
        let repo = match mode {
            RepoMode::Log => "commits.json",
            RepoMode::Git => "repo",
        };
        conf.push_str(&format!(
            "[{id}]\nissues = {id}/issues.json\nrepo = {id}/{repo}\nversions = {id}/versions.csv\nszz_import = {id}/szz_external.csv\n\n"
        ));
    }
    let path = dir.join("run.conf");
    std::fs::write(&path, conf).unwrap();
    path
}

pub fn run(config: &Path, out: &Path, until: Stage, jobs: Option<usize>) -> avmine::Result<Manifest> {
    let cfg = RunConfig::from_path(config)?;
    run_pipeline(
        &cfg,
        &RunOptions {
            out: out.to_path_buf(),
            jobs,
            enforce_selection: false,
            until,
        },
    )
}

/// Rows of a CSV file as header-keyed maps.
pub fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers.iter().zip(r.iter()).map(|(h, v)| (h.to_owned(), v.to_owned())).collect()
        })
        .collect()
}

/// Relative path -> bytes for every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn versions(list: &str) -> Vec<usize> {
    if list.is_empty() {
        Vec::new()
    } else {
        list.split(';').map(|v| v.parse().unwrap()).collect()
    }
}
