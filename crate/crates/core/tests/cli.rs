use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn geometry(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../geometries")
        .join(name)
}

fn syscat(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_syscat"))
        .env_remove("SYSCAT_OUT_DIR")
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn constants_prints_exact_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = syscat(dir.path(), &["constants", "--n", "2", "--qmax", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("-1/4"), "{text}");
    assert!(text.contains("1/3"), "{text}");
}

#[test]
fn run_writes_complete_manifest_deterministically() {
    let geom = geometry("ball_euclid.json");
    let g = geom.to_str().unwrap();
    let mut manifests = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let o = syscat(dir.path(), &["run", "--geom", g, "--checks", "B,C,E"]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        let m = json(&dir.path().join("manifest.json"));
        let files = m["files"].as_array().expect("manifest files");
        let mut on_disk: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|f| f != "manifest.json")
            .collect();
        on_disk.sort();
        let mut listed: Vec<String> = files
            .iter()
            .map(|f| f["path"].as_str().unwrap().to_owned())
            .collect();
        listed.sort();
        assert_eq!(listed, on_disk);
        for f in files {
            let bytes = std::fs::read(dir.path().join(f["path"].as_str().unwrap())).unwrap();
            assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
            assert_eq!(
                f["sha256"].as_str().unwrap(),
                hex::encode(Sha256::digest(&bytes))
            );
        }
        manifests.push(std::fs::read(dir.path().join("manifest.json")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn verify_reports_echo_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let geom = geometry("slab2.json");
    let o = syscat(
        dir.path(),
        &[
            "verify",
            "--geom",
            geom.to_str().unwrap(),
            "--checks",
            "B,C",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let reps = json(&dir.path().join("reports.json"));
    for r in reps.as_array().unwrap() {
        assert!(r["tolerance"].as_f64().unwrap() > 0.0);
        assert!(r["budget"].as_f64().unwrap() >= r["residual"].as_f64().unwrap());
        assert_eq!(r["verdict"], "pass");
    }
}

#[test]
fn tight_budget_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let geom = geometry("ball_euclid.json");
    let o = syscat(
        dir.path(),
        &[
            "verify",
            "--geom",
            geom.to_str().unwrap(),
            "--checks",
            "B,C",
            "--budget-scale",
            "1e-6",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let reps = json(&dir.path().join("reports.json"));
    assert!(reps
        .as_array()
        .unwrap()
        .iter()
        .any(|r| r["verdict"] == "fail"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = syscat(dir.path(), &["qcurv", "--geom", "no/such/file.json"]);
    assert_eq!(missing.status.code(), Some(2));
    let geom = geometry("slab2.json");
    let g = geom.to_str().unwrap();
    // Gauss-Bonnet needs a three-dimensional boundary
    let bad = syscat(dir.path(), &["verify", "--geom", g, "--checks", "E"]);
    assert_eq!(bad.status.code(), Some(2));
    let unknown = syscat(dir.path(), &["verify", "--geom", g, "--checks", "Z"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(syscat(dir.path(), &["bogus"]).status.code(), Some(2));
}

#[test]
fn env_var_overrides_out_dir() {
    let flag = tempfile::tempdir().unwrap();
    let env = tempfile::tempdir().unwrap();
    let geom = geometry("disk_euclid.json");
    let o = Command::new(env!("CARGO_BIN_EXE_syscat"))
        .env("SYSCAT_OUT_DIR", env.path())
        .arg("--out-dir")
        .arg(flag.path())
        .args([
            "yamabe",
            "--geom",
            geom.to_str().unwrap(),
            "--out",
            "yamabe.json",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read_dir(env.path()).unwrap().count() > 0);
    assert_eq!(std::fs::read_dir(flag.path()).unwrap().count(), 0);
}

#[test]
fn scatter_csv_on_the_disk() {
    let dir = tempfile::tempdir().unwrap();
    let geom = geometry("disk_euclid.json");
    let o = syscat(
        dir.path(),
        &[
            "scatter",
            "--geom",
            geom.to_str().unwrap(),
            "--s-grid",
            "1.2:1.8:0.2",
            "--modes",
            "l=0;l=1",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "mode,s,S,conditioning");
    assert_eq!(lines.len(), 1 + 2 * 4);
}
