use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use spd_gbw::linalg::io::{write_matrix, BatchManifest, ManifestEntry};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spd-gbw"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_batch(dir: &Path, matrices: &[DMatrix<f64>]) -> String {
    fs::create_dir_all(dir.join("m")).unwrap();
    let files = matrices
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let rel = format!("m/{i}.csv");
            write_matrix(&dir.join(&rel), m).unwrap();
            ManifestEntry { path: rel, label: None }
        })
        .collect::<Vec<_>>();
    let manifest = BatchManifest {
        dim: matrices[0].nrows(),
        count: files.len(),
        num_classes: None,
        files,
        generator: None,
    };
    let p = dir.join("manifest.json");
    manifest.write(&p).unwrap();
    path(&p)
}

#[test]
fn verify_passes_with_exit_zero_and_json_detail() {
    let out = bin(&["verify", "--suite", "operators", "--dim", "2,4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 6);
    for c in report["checks"].as_array().unwrap() {
        assert!(c["residual"].as_f64().unwrap() <= c["tolerance"].as_f64().unwrap());
    }
}

#[test]
fn verify_csv_has_one_row_per_check() {
    let out = bin(&["verify", "--suite", "frechet", "--dim", "3", "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("frechet,")).count(), 3, "{text}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&bin(&["verify", "--suite", "nonsense"])), 2);
    assert_eq!(code(&bin(&["verify", "--dim", "1"])), 2);
    assert_eq!(code(&bin(&["frobnicate"])), 2);
    assert_eq!(code(&bin(&["diagnose", "--input", "/nonexistent/manifest.json"])), 2);
    assert_eq!(code(&bin(&["generate", "--kappa-min", "0.5", "--out", "/tmp/unused"])), 2);
    assert_eq!(code(&bin(&["diagnose", "--theta", "0", "--count", "2"])), 2);
}

#[test]
fn threads_variable_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_spd-gbw"))
        .args(["verify", "--suite", "propositions", "--dim", "2"])
        .env("SPD_GBW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_spd-gbw"))
        .args(["verify", "--suite", "propositions", "--dim", "2"])
        .env("SPD_GBW_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
}

#[test]
fn non_spd_input_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_batch(
        dir.path(),
        &[DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])],
    );
    let out = bin(&["diagnose", "--input", &manifest]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("matrix 1"));
}

#[test]
fn diagnose_reads_a_manifest_and_reports_three_stages() {
    let dir = tempfile::tempdir().unwrap();
    let u = nalgebra::DVector::from_vec(vec![0.6, 0.8, 0.0]);
    let manifest = write_batch(dir.path(), &[&u * u.transpose(), &u * u.transpose()]);
    let out = bin(&["diagnose", "--input", &manifest, "--lambda", "1e-5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("without,1e3,2,2,100.0000"), "{text}");
    assert!(text.contains("without,1e4,2,2,100.0000"), "{text}");
    for stage in ["without", "before", "after"] {
        assert_eq!(text.lines().filter(|l| l.starts_with(&format!("{stage},"))).count(), 3);
    }
}

#[test]
fn diagnose_json_on_a_synthetic_batch() {
    let dir = tempfile::tempdir().unwrap();
    let out_file = dir.path().join("diag.json");
    let out = bin(&[
        "diagnose", "--dim", "6", "--count", "20", "--classes", "1", "--kappa-min", "1e3", "--kappa-max", "1e8",
        "--spacing", "grid", "--format", "json", "--out", &path(&out_file),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out_file).unwrap()).unwrap();
    assert_eq!(report["size"], 20);
    let stages = report["stages"].as_array().unwrap();
    let after = stages.iter().find(|s| s["stage"] == "after").unwrap();
    assert!(after["counts"].as_array().unwrap().iter().all(|c| c["count"] == 0));
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = bin(&["generate", "--dim", "4", "--count", "3", "--seed", seed, "--out", &path(&dir.path().join(name))]);
        assert_eq!(code(&out), 0);
    };
    run("a", "9");
    run("b", "9");
    run("c", "10");
    let read = |name: &str, file: &str| fs::read(dir.path().join(name).join(file)).unwrap();
    assert_eq!(read("a", "manifest.json"), read("b", "manifest.json"));
    for i in 0..6 {
        let f = format!("matrices/{i:05}.csv");
        assert_eq!(read("a", &f), read("b", &f));
    }
    assert_ne!(read("a", "matrices/00000.csv"), read("c", "matrices/00000.csv"));
}

#[test]
fn zero_count_gives_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["generate", "--count", "0", "--out", &path(dir.path())]);
    assert_eq!(code(&out), 0);
    let m = BatchManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.count, 0);
    assert!(m.files.is_empty());
}

#[test]
fn train_writes_metrics_summary_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&bin(&["generate", "--dim", "6", "--count", "20", "--seed", "2", "--out", &path(&data)])), 0);
    let run = dir.path().join("run");
    let out = bin(&[
        "train", "--data", &path(&data.join("manifest.json")), "--arch", "6,4", "--theta", "0.5,1", "--bn", "both",
        "--epochs", "2", "--batch-size", "8", "--out", &path(&run),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4, "{summary}");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3 * 2, "{metrics}");
    for id in 0..3 {
        assert!(run.join(format!("checkpoint_{id:03}.json")).exists());
    }
}

#[test]
fn train_rejects_mismatched_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&bin(&["generate", "--dim", "5", "--count", "4", "--out", &path(&data)])), 0);
    let out = bin(&[
        "train", "--data", &path(&data.join("manifest.json")), "--arch", "6,4", "--epochs", "1", "--out",
        &path(&dir.path().join("run")),
    ]);
    assert_ne!(code(&out), 0);
}
