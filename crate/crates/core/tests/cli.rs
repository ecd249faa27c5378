use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scedae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scedae")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("cfg.json");
    fs::write(
        &path,
        format!(
            r#"{{"dataset": {{"generator": "tetra", "seed": 2, "lift": {{"kind": "sigmoid_stack", "seed": 1}}}},
                "preprocessing": {{"l2_normalize": false}},
                "mode": "ens_struct", "replicates": 2, "threads": 2,
                "anchor": {{"p": 20, "r": 3}}, "kmeans": {{"n_init": 3}},
                "autoencoder": {{"structure": [8, 6, 4], "encoding_dim": 3}},
                "epochs": [3]{extra}}}"#
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_then_eval_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tetra.csv");
    let out = scedae(&["gen", "--dataset", "tetra", "--seed", "4", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = csv.to_str().unwrap();
    let out = scedae(&["eval", "--pred", csv, "--truth", csv]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n"], 400);
    assert_eq!(v["acc"], 1.0);
    assert_eq!(v["ari"], 1.0);
}

#[test]
fn gen_with_lift_writes_binary() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("lsun.sce");
    let out = scedae(&[
        "gen", "--dataset", "lsun", "--out", bin.to_str().unwrap(), "--lift", "tan_sigmoid", "--lift-seed", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ds = scedae::datasets::load_binary(&bin).unwrap();
    assert_eq!(ds.x.cols(), 10);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#", "bogus_key": 1"#);
    assert_eq!(scedae(&["run", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(scedae(&["run", "--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
    assert_eq!(scedae(&["gen", "--dataset", "nope", "--out", "/tmp/x.csv"]).status.code(), Some(2));
    assert_eq!(scedae(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn run_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let res = scedae(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let (ra, rb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ra, rb);
    let v: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(v["cells"][0]["replicates"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("a.json.timings.json").exists());
}
