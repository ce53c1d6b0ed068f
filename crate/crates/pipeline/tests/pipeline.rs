use std::fs;
use std::path::Path;
use std::process::Command;

use pbdw_pipeline::artifacts::RunDir;
use pbdw_pipeline::config::EmbeddingChoice;
use pbdw_pipeline::{offline, online, online_no_truth, report, run_online, Comparator, OnlineOptions, PipelineError, RunConfig};

fn small_config(sizes: Vec<usize>) -> RunConfig {
    let mut cfg = RunConfig::desk_default();
    cfg.problem.n_h = 9;
    cfg.sensors.pattern = "m9".into();
    cfg.dictionary.sizes = sizes;
    cfg.embedding.rows = Some(300);
    cfg.test.size = 6;
    cfg
}

fn built(sizes: Vec<usize>) -> (tempfile::TempDir, RunDir) {
    let tmp = tempfile::tempdir().unwrap();
    let run = offline(&small_config(sizes), &tmp.path().join("run"), false).unwrap();
    (tmp, run)
}

#[test]
fn single_atom_dictionary_runs_end_to_end() {
    let (_tmp, run) = built(vec![1]);
    let out = online(&run.root, &OnlineOptions::default()).unwrap();
    for file in ["errors.csv", "sample_errors.csv", "constants.csv", "recoveries.csv", "observations.bin"] {
        assert!(run.root.join("online").join(file).exists(), "{file} missing");
    }
    for c in [Comparator::A1Pod, Comparator::A2Dict, Comparator::A3Best] {
        let row = out.table.row(c, 1).unwrap();
        assert_eq!(row.n, 6);
        assert!(row.mean.is_finite());
    }
}

#[test]
fn occupied_run_dir_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("stale.txt"), "x").unwrap();
    let cfg = small_config(vec![5]);
    assert!(matches!(offline(&cfg, &dir, false), Err(PipelineError::Config(_))));
    offline(&cfg, &dir, true).unwrap();
    assert!(!dir.join("stale.txt").exists());
}

#[test]
fn sketched_blocks_are_reproducible() {
    let (tmp, run) = built(vec![8]);
    let again = offline(&run.config, &tmp.path().join("again"), false).unwrap();
    let names: Vec<_> = run.manifest.arrays.keys().filter(|n| n.starts_with("sketch_")).cloned().collect();
    assert!(!names.is_empty());
    for name in names {
        let a = fs::read(run.root.join("arrays").join(format!("{name}.bin"))).unwrap();
        let b = fs::read(again.root.join("arrays").join(format!("{name}.bin"))).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn atom_as_truth_is_recovered_by_the_best_space() {
    let (_tmp, run) = built(vec![12]);
    let params = run.snapshot_params().unwrap();
    let out = run_online(&run, &params[..3], &OnlineOptions::default()).unwrap();
    for e in out.table.errors(Comparator::A3Best, 12) {
        assert!(e <= 1e-8, "A3 error {e:e}");
    }
}

#[test]
fn selected_space_is_never_better_than_the_best() {
    let (_tmp, run) = built(vec![10, 25]);
    let out = online(&run.root, &OnlineOptions::default()).unwrap();
    for k in [10, 25] {
        let a2 = out.table.errors(Comparator::A2Dict, k);
        let a3 = out.table.errors(Comparator::A3Best, k);
        assert_eq!(a2.len(), a3.len());
        for (x, y) in a2.iter().zip(&a3) {
            assert!(x >= y);
        }
    }
}

#[test]
fn observation_only_recovery_matches_the_truth_run() {
    let (_tmp, run) = built(vec![10, 25]);
    let out = online(&run.root, &OnlineOptions::default()).unwrap();
    let rows = online_no_truth(&run.root, &run.root.join("online").join("observations"), &OnlineOptions::default()).unwrap();
    assert_eq!(rows, out.recoveries);
}

#[test]
fn pod_constants_are_monotone() {
    let (_tmp, run) = built(vec![20]);
    let out = online(&run.root, &OnlineOptions::default()).unwrap();
    let c = &out.constants;
    assert!(!c.is_empty());
    for w in c.windows(2) {
        assert!(w[1].eps_n <= w[0].eps_n * (1.0 + 1e-12));
        assert!(w[1].beta_n <= w[0].beta_n * (1.0 + 1e-12));
    }
}

#[test]
fn report_merges_runs_of_one_problem_only() {
    let (tmp, run) = built(vec![6]);
    online(&run.root, &OnlineOptions::default()).unwrap();
    let mut cfg = run.config.clone();
    cfg.test.seed = 7;
    let twin = offline(&cfg, &tmp.path().join("twin"), false).unwrap();
    online(&twin.root, &OnlineOptions::default()).unwrap();
    let rep = report(&[&run.root, &twin.root], &tmp.path().join("report")).unwrap();
    assert_eq!(rep.errors.len(), 6);
    assert!(tmp.path().join("report").join("error_vs_k.csv").exists());

    let mut other = run.config.clone();
    other.problem.n_h = 12;
    let odd = offline(&other, &tmp.path().join("odd"), false).unwrap();
    online(&odd.root, &OnlineOptions::default()).unwrap();
    let err = report(&[&run.root, &odd.root], &tmp.path().join("bad")).unwrap_err();
    assert!(matches!(err, PipelineError::Artifact { .. }));
}

#[test]
fn exact_surrogate_runs_without_sketch() {
    let mut cfg = small_config(vec![6]);
    cfg.embedding.kind = EmbeddingChoice::Exact;
    let tmp = tempfile::tempdir().unwrap();
    let run = offline(&cfg, &tmp.path().join("run"), false).unwrap();
    assert!(run.sketched().unwrap().is_none());
    let out = online(&run.root, &OnlineOptions::default()).unwrap();
    assert_eq!(out.table.row(Comparator::A2Dict, 6).unwrap().n, 6);
}

fn flip_byte(path: &Path) {
    let mut bytes = fs::read(path).unwrap();
    bytes[0] ^= 0x5a;
    fs::write(path, bytes).unwrap();
}

#[test]
fn tampered_array_exits_with_artifact_code() {
    let (_tmp, run) = built(vec![6]);
    flip_byte(&run.root.join("arrays").join("cross.bin"));
    let err = online(&run.root, &OnlineOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::Artifact { .. }));
    assert_eq!(err.exit_code(), 4);
    let status = Command::new(env!("CARGO_BIN_EXE_pbdw"))
        .args(["online", "--run-dir"])
        .arg(&run.root)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn bad_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    let mut cfg = small_config(vec![20, 10]);
    cfg.test.seed = cfg.dictionary.snapshot_seed;
    fs::write(&path, cfg.to_toml()).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_pbdw"))
        .args(["offline", "--config"])
        .arg(&path)
        .arg("--run-dir")
        .arg(tmp.path().join("run"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&path).unwrap();
            n += 1;
        }
    }
    assert!(n >= 3);
}
