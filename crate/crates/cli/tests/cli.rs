//! End-to-end runs of the `lgrb` binary on a small grid.

use std::path::Path;
use std::process::Command;

fn lgrb(out: &Path, args: &[&str]) -> String {
    let small = [
        "--experiment",
        "distributed",
        "--nx",
        "12",
        "--ny",
        "12",
        "--coarse-x",
        "3",
        "--coarse-y",
        "3",
        "--modes",
        "3",
        "--max-samples",
        "3",
        "--n-train",
        "8",
        "--n-test",
        "4",
        "--timing-repeats",
        "1",
        "--study-coarse",
        "3x3,4x4",
        "--study-modes",
        "2,3",
        "--study-samples",
        "1,2",
        "--fixed-samples",
        "2",
    ];
    let o = Command::new(env!("CARGO_BIN_EXE_lgrb"))
        .args(args)
        .args(small)
        .arg("--output-dir")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn preset_prints_valid_json() {
    let o = Command::new(env!("CARGO_BIN_EXE_lgrb"))
        .args(["preset", "random-domain"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["nx"], 100);
}

#[test]
fn offline_online_study_bench() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    lgrb(out, &["offline"]);
    assert!(out.join("offline/manifest.json").exists());
    assert!(lgrb(out, &["online"]).contains("e_u"));
    assert!(out.join("online.csv").exists());
    lgrb(out, &["study", "--only", "coarse,modes,samples"]);
    for t in ["coarse", "modes", "samples"] {
        assert!(
            out.join("tables").join(format!("{t}.csv")).exists(),
            "missing table {t}"
        );
    }
    assert!(lgrb(out, &["bench"]).contains("speedup"));
    let timing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    assert!(timing["speedup"].as_f64().unwrap() > 0.0);
}

#[test]
fn bad_flags_are_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_lgrb"))
        .args(["offline", "--nx", "12", "--ny", "12", "--coarse-x", "0"])
        .output()
        .unwrap();
    assert!(!o.status.success());
}
