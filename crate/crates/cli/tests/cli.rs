use std::path::Path;
use std::process::{Command, Output};

fn geoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = geoflow(&["frobnicate", "--config", "x.cfg"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid.mesh = 3\n");
    let out = geoflow(&["constants", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.mesh"));
}

#[test]
fn invariant_headroom_names_n_theta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "grid.n = 16\ngrid.n_theta = 8\ninvariant.j_max = 5\n",
    );
    let out = geoflow(&["invariant", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("N_theta"), "{err}");
    assert!(err.contains("invariant.j_max"), "{err}");
}

#[test]
fn flat_identities_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "subcommand = verify-identities\nidentities.count = 10\n",
    );
    let out_dir = dir.path().join("out");
    let out = geoflow(&[
        "verify-identities",
        "--config",
        &cfg,
        "--seed",
        "11",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(out_dir.join("report.json").exists());
    let table = std::fs::read_to_string(out_dir.join("tables/identities.csv")).unwrap();
    assert!(table.lines().count() > 10);
}

#[test]
fn mismatched_subcommand_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "subcommand = xray\n");
    let out = geoflow(&["constants", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "grid.n = 16\nbeurling.trials = 3\nbeurling.k_max = 2\nbeurling.minimality = 2\nmetric.lambda.cos[1][0] = 0.1\n",
    );
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = geoflow(&[
            "beurling",
            "--config",
            &cfg,
            "--seed",
            "5",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.code().is_some_and(|c| c <= 1));
        reports.push(std::fs::read(out_dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "beurling.trials = 1\n");
    let out = geoflow(&["beurling", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}
