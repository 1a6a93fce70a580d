mod common;

use std::fs;

use dci_pipeline::manifest::{RootLock, LOCK_FILE};
use dci_pipeline::{run, status, validate, PipelineError, RunOptions, Stage, Status};

fn all() -> RunOptions {
    RunOptions {
        force: false,
        build_missing: true,
    }
}

#[test]
fn full_run_then_rerun_skips_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path(), 3);
    let first = run(&cfg, &Stage::ALL, all()).unwrap();
    assert_eq!(first.ran, Stage::ALL.to_vec());
    assert!(validate(dir.path()).is_empty(), "{:?}", validate(dir.path()));
    assert!(validate(&dir.path().join("bundle")).is_empty());
    for s in Stage::ALL {
        assert_eq!(status(dir.path(), &cfg, s), Status::Fresh, "{s}");
    }
    let second = run(&cfg, &Stage::ALL, all()).unwrap();
    assert!(second.ran.is_empty());
    assert_eq!(second.skipped, Stage::ALL.to_vec());
    assert!(!dir.path().join(LOCK_FILE).exists());

    // a changed ridge penalty only touches the tree and everything after it
    let mut cfg2 = cfg.clone();
    cfg2.tree.lambda = 0.5;
    let third = run(&cfg2, &Stage::ALL, all()).unwrap();
    assert_eq!(third.ran, vec![Stage::Tree, Stage::Export]);

    // forcing a stage re-runs it and leaves its downstream stale
    let fourth = run(&cfg2, &[Stage::Criteria], RunOptions { force: true, build_missing: false }).unwrap();
    assert_eq!(fourth.ran, vec![Stage::Criteria]);
    let fifth = run(&cfg2, &[Stage::Export], all()).unwrap();
    // criteria output is byte-identical, so the tree and export stay valid
    assert!(fifth.ran.is_empty(), "{:?}", fifth.ran);
}

#[test]
fn export_without_tree_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path(), 1);
    run(&cfg, &[Stage::Generate, Stage::DimSweep, Stage::Train, Stage::Criteria], all()).unwrap();
    let err = run(&cfg, &[Stage::Export], RunOptions::default()).unwrap_err();
    match &err {
        PipelineError::Missing(msg) => {
            assert!(msg.contains("tree (missing)"), "{msg}");
            assert!(!msg.contains("criteria"), "{msg}");
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(err.exit_code(), 1);
    assert!(!dir.path().join("bundle").exists());
}

#[test]
fn corruption_is_caught_and_repaired_by_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path(), 2);
    run(&cfg, &Stage::ALL, all()).unwrap();

    let pgm = dir.path().join("dataset/fields/B1-0.20_bin.pgm");
    let mut bytes = fs::read(&pgm).unwrap();
    let n = bytes.len();
    bytes[n - 10] ^= 0x55;
    fs::write(&pgm, &bytes).unwrap();
    let v = validate(dir.path());
    assert!(v.iter().any(|x| x.path == "dataset/fields/B1-0.20_bin.pgm"), "{v:?}");
    assert!(matches!(status(dir.path(), &cfg, Stage::Generate), Status::Stale(_)));

    let bundled = dir.path().join("bundle/fields/B2-0.10_raw.pgm");
    fs::write(&bundled, b"P5\n1 1\n255\n\0").unwrap();
    let v = validate(&dir.path().join("bundle"));
    assert!(v.iter().any(|x| x.path == "fields/B2-0.10_raw.pgm"), "{v:?}");

    let report = run(&cfg, &Stage::ALL, all()).unwrap();
    assert!(report.ran.contains(&Stage::Generate) && report.ran.contains(&Stage::Export));
    assert!(validate(dir.path()).is_empty());
}

#[test]
fn mixture_weights_off_the_simplex_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path(), 4);
    run(&cfg, &Stage::ALL, all()).unwrap();
    let path = dir.path().join("models/vade_k2.json");
    let mut c: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    c["pi"] = serde_json::json!([0.7, 0.7]);
    fs::write(&path, serde_json::to_vec_pretty(&c).unwrap()).unwrap();
    let v = validate(dir.path());
    assert!(v.iter().any(|x| x.path == "models/vade_k2.json" && x.message.contains("digest")), "{v:?}");
    assert!(v.iter().any(|x| x.path == "models/vade_k2.json" && !x.message.contains("digest")), "{v:?}");
}

#[test]
fn a_held_lock_refuses_a_second_writer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path(), 5);
    let _lock = RootLock::acquire(dir.path()).unwrap();
    assert!(matches!(run(&cfg, &[Stage::Generate], all()), Err(PipelineError::Locked(_))));
}

#[test]
fn invalid_configuration_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(dir.path(), 0);
    cfg.training.vade_dim = 9;
    let err = run(&cfg, &Stage::ALL, all()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn seeded_runs_export_identical_json() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&common::tiny_config(a.path(), 11), &Stage::ALL, all()).unwrap();
    let mut cfg_b = common::tiny_config(b.path(), 11);
    cfg_b.parallel = 2;
    run(&cfg_b, &Stage::ALL, all()).unwrap();
    let ja = common::json_files(&a.path().join("bundle"));
    let jb = common::json_files(&b.path().join("bundle"));
    assert!(!ja.is_empty());
    assert_eq!(ja.iter().map(|f| &f.0).collect::<Vec<_>>(), jb.iter().map(|f| &f.0).collect::<Vec<_>>());
    for ((p, x), (_, y)) in ja.iter().zip(&jb) {
        assert!(x == y, "{p} differs");
    }
}
