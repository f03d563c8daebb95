use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sideslip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sideslip"))
        .args(args)
        .env("SIDESLIP_LOG", "off")
        .output()
        .expect("binary runs")
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = sideslip(&["fly"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_estimator_list_fails_with_stage_prefix() {
    let out = sideslip(&["--estimators", "kalman", "config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: config:"));
}

#[test]
fn prepare_without_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = sideslip(&["--out", dir.path().to_str().unwrap(), "prepare"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: prepare:"));
}

#[test]
fn generate_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = sideslip(&["--seed", "3", "--out", dir.path().to_str().unwrap(), "generate", "--catalogue", "4"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(!sa.is_empty());
    assert_eq!(sa, sb);
}

#[test]
fn config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = sideslip(&["--seed", "11", "--estimators", "ukf-tyre,ffnn-i2", "config"]);
    assert!(out.status.success());
    let path = dir.path().join("run.toml");
    fs::write(&path, &out.stdout).unwrap();
    let again = sideslip(&["--config", path.to_str().unwrap(), "config"]);
    assert!(again.status.success());
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn input_set_filter_keeps_filters() {
    let out = sideslip(&["--input-set", "i1", "config"]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("ffnn-i1") && text.contains("ekf-tyre"));
    assert!(!text.contains("ffnn-i2") && !text.contains("rnn-i2"));
}

#[test]
fn selftest_passes() {
    let out = sideslip(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("PASS").count(), 4);
}
