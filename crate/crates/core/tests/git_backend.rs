use std::collections::BTreeMap;

use avmine::harness::{generate_synthetic, materialize_git, SyntheticSpec};
use avmine::vcs::{GitRepo, MemoryRepo, Repository};

#[test]
fn git_and_memory_backends_agree() {
    let p = generate_synthetic(&SyntheticSpec::new("GIT", 5, 12, 4, 21)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ids = materialize_git(&p.log, &dir.path().join("repo")).unwrap();
    let back: BTreeMap<&String, &String> = ids.iter().map(|(k, v)| (v, k)).collect();

    let git = GitRepo::open(&dir.path().join("repo"), None).unwrap();
    let mem = MemoryRepo::from_log(&p.log).unwrap();
    let gc = git.commits().unwrap();
    let mc = mem.commits().unwrap();
    assert_eq!(gc.len(), mc.len());
    for (g, m) in gc.iter().zip(&mc) {
        assert_eq!(back[&g.id], &m.id);
        assert_eq!((g.timestamp, &g.author, g.message.trim()), (m.timestamp, &m.author, m.message.trim()));
        assert_eq!(g.changes, m.changes, "diff of {}", m.id);
    }

    let last_git = &gc.last().unwrap().id;
    let last_mem = &mc.last().unwrap().id;
    let files = git.files_at(last_git).unwrap();
    assert_eq!(files, mem.files_at(last_mem).unwrap());
    for f in &files {
        assert_eq!(git.file_at(last_git, f).unwrap(), mem.file_at(last_mem, f).unwrap());
        let owners: Vec<String> = git.blame(last_git, f).unwrap().iter().map(|o| back[o].clone()).collect();
        assert_eq!(owners, mem.blame(last_mem, f).unwrap(), "blame of {f}");
    }
}

#[test]
fn merge_logs_are_not_materialized() {
    let mut p = generate_synthetic(&SyntheticSpec::new("M", 3, 2, 2, 1)).unwrap();
    let first = p.log.commits[0].id.clone();
    p.log.commits[2].parents.push(first);
    let dir = tempfile::tempdir().unwrap();
    assert!(materialize_git(&p.log, dir.path()).is_err());
}
