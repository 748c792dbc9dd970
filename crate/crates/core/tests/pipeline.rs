mod common;

use std::process::Command;

use avmine::harness::{generate_synthetic, run_pipeline, RepoMode, RunConfig, RunOptions, Stage, SyntheticSpec, Truth};
use common::{read_csv, run, snapshot, versions, write_run};

fn spec(id: &str, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        unavailable_fraction: 0.1,
        inconsistent_fraction: 0.1,
        ..SyntheticSpec::new(id, 6, 20, 6, seed)
    }
}

#[test]
fn fixture_run_writes_every_family_and_an_exact_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate_synthetic(&spec("FIX", 1)).unwrap();
    let conf = write_run(dir.path(), &[&p], RepoMode::Log, "");
    let out = dir.path().join("out");
    let manifest = run(&conf, &out, Stage::Stability, None).unwrap();

    assert_eq!(manifest.status, "complete");
    assert_eq!(manifest.stages.len(), 8);
    for family in ["rq1.csv", "av_labels.csv", "class_labels.csv", "selections.csv", "metrics.csv", "rank_tables.csv"] {
        assert!(out.join(family).is_file(), "{family} missing");
    }
    assert!(manifest.files.iter().any(|f| f.path.starts_with("datasets/FIX/")));

    let on_disk = snapshot(&out);
    assert_eq!(on_disk.len(), manifest.files.len() + 1);
    for f in &manifest.files {
        let bytes = &on_disk[&f.path];
        let lines = bytes.iter().filter(|b| **b == b'\n').count();
        assert_eq!(lines, f.rows + 1, "{}", f.path);
    }
}

#[test]
fn subcommands_stop_after_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate_synthetic(&spec("STOP", 2)).unwrap();
    let conf = write_run(dir.path(), &[&p], RepoMode::Log, "");
    let out = dir.path().join("out");
    let m = run(&conf, &out, Stage::LabelAv, Some(2)).unwrap();
    assert_eq!(m.stages, ["ingest", "rq1", "label-av"]);
    assert!(out.join("av_labels.csv").is_file());
    assert!(!out.join("class_labels.csv").exists());
}

#[test]
fn enforce_selection_refuses_with_a_threshold_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate_synthetic(&spec("SMALL", 3)).unwrap();
    let conf = write_run(dir.path(), &[&p], RepoMode::Log, "min_usable_defects = 1000");
    let cfg = RunConfig::from_path(&conf).unwrap();
    let out = dir.path().join("out");
    let mut opts = RunOptions::new(&out);
    opts.enforce_selection = true;
    let err = run_pipeline(&cfg, &opts).unwrap_err().to_string();
    assert!(err.contains("SMALL") && err.contains("< 1000"), "{err}");

    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "failed");
    assert_eq!(m["failed_stage"], "rq1");
    assert!(out.join("rq1.csv").is_file());
    let sel = read_csv(&out.join("selection.csv"));
    assert_eq!(sel[0]["selected"], "false");

    // Without the flag the same project runs through.
    opts.enforce_selection = false;
    opts.until = Stage::LabelAv;
    assert!(run_pipeline(&cfg, &opts).is_ok());
}

#[test]
fn enforce_selection_drops_only_failing_projects() {
    let dir = tempfile::tempdir().unwrap();
    let big = generate_synthetic(&SyntheticSpec::new("BIG", 6, 40, 5, 4)).unwrap();
    let small = generate_synthetic(&SyntheticSpec::new("TINY", 6, 5, 5, 5)).unwrap();
    let conf = write_run(dir.path(), &[&big, &small], RepoMode::Log, "min_usable_defects = 30");
    let cfg = RunConfig::from_path(&conf).unwrap();
    let mut opts = RunOptions::new(dir.path().join("out"));
    opts.enforce_selection = true;
    opts.until = Stage::LabelAv;
    let m = run_pipeline(&cfg, &opts).unwrap();
    assert!(m.notices.iter().any(|n| n.contains("TINY")));
    let labels = read_csv(&dir.path().join("out/av_labels.csv"));
    assert!(labels.iter().all(|r| r["project"] == "BIG"));
}

#[test]
fn empty_defect_list_writes_rq1_only() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate_synthetic(&spec("EMPTY", 6)).unwrap();
    let conf = write_run(dir.path(), &[&p], RepoMode::Log, "");
    std::fs::write(dir.path().join("EMPTY/issues.json"), "[]").unwrap();
    let out = dir.path().join("out");
    let m = run(&conf, &out, Stage::Stability, None).unwrap();
    let rq1 = read_csv(&out.join("rq1.csv"));
    assert_eq!(rq1[0]["defects"], "0");
    assert_eq!(rq1[0]["pct_available"], "NA");
    assert!(!out.join("av_labels.csv").exists());
    assert!(m.notices.iter().any(|n| n.contains("no usable defects")));
    assert_eq!(m.stages, ["ingest", "rq1"]);
}

#[test]
fn failing_stage_keeps_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate_synthetic(&spec("LIMIT", 7)).unwrap();
    let conf = write_run(dir.path(), &[&p], RepoMode::Log, "catalog_limit = 5");
    let out = dir.path().join("out");
    let err = run(&conf, &out, Stage::Stability, None).unwrap_err();
    assert!(err.to_string().contains("exceed"));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "failed");
    assert_eq!(m["failed_stage"], "select-features");
    assert!(out.join("class_labels.csv").is_file());
    assert!(out.join("datasets/LIMIT").is_dir());
}

#[test]
fn constant_p_lets_increment_recover_it() {
    let dir = tempfile::tempdir().unwrap();
    let s = SyntheticSpec {
        constant_p: Some(2.0),
        ..SyntheticSpec::new("CP", 10, 40, 5, 8)
    };
    let p = generate_synthetic(&s).unwrap();
    let conf = write_run(dir.path(), &[&p], RepoMode::Log, "");
    let out = dir.path().join("out");
    run(&conf, &out, Stage::LabelAv, None).unwrap();
    let inc: Vec<_> = read_csv(&out.join("proportions.csv"))
        .into_iter()
        .filter(|r| r["estimator"] == "Increment" && r["source"] == "Increment")
        .collect();
    assert!(!inc.is_empty(), "no defect got past the warm-up");
    assert!(inc.iter().all(|r| r["p"] == "2"));
}

#[test]
fn oracle_labels_equal_the_pipeline_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate_synthetic(&spec("ORC", 9)).unwrap();
    let conf = write_run(dir.path(), &[&p], RepoMode::Log, "");
    let out = dir.path().join("out");
    run(&conf, &out, Stage::LabelAv, None).unwrap();
    let actual: std::collections::BTreeMap<String, Vec<usize>> = read_csv(&out.join("av_labels.csv"))
        .into_iter()
        .filter(|r| r["method"] == "Actual")
        .map(|r| (r["issue_key"].clone(), versions(&r["affected_versions"])))
        .collect();
    let consistent: Vec<_> = p.oracle.iter().filter(|o| o.truth == Truth::Consistent).collect();
    assert_eq!(actual.len(), consistent.len());
    for o in consistent {
        let expect: Vec<usize> = (1..=o.fv).filter(|v| o.affected[v - 1]).collect();
        assert_eq!(actual[&o.issue_key], expect, "{}", o.issue_key);
    }
}

#[test]
fn cli_synthesizes_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_dlm");
    let syn = dir.path().join("syn");
    let st = Command::new(bin)
        .args(["--seed", "11", "--out"])
        .arg(&syn)
        .args(["synth", "--versions", "6", "--defects", "15", "--classes", "5"])
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(String::from_utf8_lossy(&st.stdout).contains("project.conf"));
    let out = dir.path().join("res");
    let st = Command::new(bin)
        .arg("--config")
        .arg(syn.join("project.conf"))
        .arg("--out")
        .arg(&out)
        .args(["--jobs", "2", "rq1"])
        .env("DLM_LOG", "error")
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(out.join("rq1.csv").is_file());

    let missing = Command::new(bin).arg("run").output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--config"));
}
