use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_quench");

fn quench(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).env_remove("QUENCH_WORKERS").args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = quench(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_report(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no report in {stderr}"));
    serde_json::from_str(line).unwrap()
}

fn write_config(dir: &Path, name: &str, n: usize, h: f64, side: usize, method: &str) -> PathBuf {
    let map = if method == "gsk" { r#"{"kind": "qrbf", "gamma": 1.0}"# } else { r#"{"kind": "qlin"}"# };
    let text = format!(
        r#"{{ "n_qubits": {n}, "alpha": 0.5, "mode": {{ "kind": "closed" }},
  "grid": {{ "h_values": [{h}], "n_theta": {side}, "n_phi": {side} }},
  "kernel": {{ "method": {{ "kind": "{method}" }}, "map": {map} }},
  "experiment": {{ "folds": 3, "c_grid": [1, 10] }} }}"#
    );
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

/// label → gram → train → eval on a small N=2 grid.
fn pipeline(dir: &Path) {
    write_config(dir, "c.json", 2, 0.6, 12, "gsk");
    ok(dir, &["label", "--config", "c.json", "--out", "d.csv"]);
    ok(dir, &["gram", "--dataset", "d.csv", "--config", "c.json", "--out", "g.bin"]);
    ok(dir, &["train", "--dataset", "d.csv", "--gram", "g.bin", "--config", "c.json", "--out", "m.json"]);
    ok(dir, &["eval", "--dataset", "d.csv", "--gram", "g.bin", "--model", "m.json", "--out", "e.json"]);
}

#[test]
fn shipped_configs_load() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        // Exporting traces only needs a scenario, so it exercises the loader cheaply.
        let out = quench(
            dir.path(),
            &[
                "export",
                "--kind",
                "traces",
                "--config",
                path.to_str().unwrap(),
                "--h",
                "0.9",
                "--theta",
                "1.5pi",
                "--phi",
                "0.5pi",
                "--out",
                "t.csv",
            ],
        );
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn grid_field_strengths_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", 2, 0.0, 6, "dsk");
    let out = quench(dir.path(), &["label", "--config", "c.json", "--out", "d.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_report(&out)["message"].as_str().unwrap().contains("> 0"));
    assert!(!dir.path().join("d.csv").exists());
}

#[test]
fn full_pipeline_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    let metrics: Value = serde_json::from_slice(&fs::read(dir.join("e.json")).unwrap()).unwrap();
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((0.8..=1.0).contains(&acc), "accuracy {acc}");
    for out in ["d.csv", "g.bin", "m.json", "e.json"] {
        let manifest: Value =
            serde_json::from_slice(&fs::read(dir.join(format!("{out}.manifest.json"))).unwrap()).unwrap();
        assert_eq!(manifest["tool"], "quench");
        assert!(manifest["outputs"].as_array().unwrap().iter().all(|a| a["sha256"].as_str().unwrap().len() == 64));
    }

    // Seed-pinned reruns reproduce every artifact, whatever the worker count.
    for out in ["d.csv", "g.bin", "m.json", "e.json"] {
        let stdout = ok(dir, &["--workers", "2", "rerun", &format!("{out}.manifest.json")]);
        assert!(stdout.lines().all(|l| l.starts_with("identical")), "{out}: {stdout}");
        assert!(stdout.contains(out));
    }
}

#[test]
fn gram_cache_is_reused_and_corruption_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "c.json", 2, 0.6, 6, "dsk");
    ok(dir, &["label", "--config", "c.json", "--out", "d.csv"]);
    ok(dir, &["gram", "--dataset", "d.csv", "--config", "c.json", "--out", "g.bin"]);
    let first = fs::read(dir.join("g.bin")).unwrap();
    let stamp = fs::metadata(dir.join("g.bin")).unwrap().modified().unwrap();
    ok(dir, &["gram", "--dataset", "d.csv", "--config", "c.json", "--out", "g.bin"]);
    assert_eq!(fs::metadata(dir.join("g.bin")).unwrap().modified().unwrap(), stamp);
    assert_eq!(fs::read(dir.join("g.bin")).unwrap(), first);

    fs::write(dir.join("g.bin"), b"not a gram matrix").unwrap();
    let out = quench(dir, &["gram", "--dataset", "d.csv", "--config", "c.json", "--out", "g.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_report(&out)["error"], "validation");

    ok(dir, &["gram", "--dataset", "d.csv", "--config", "c.json", "--out", "g.bin", "--force"]);
    assert_eq!(fs::read(dir.join("g.bin")).unwrap(), first);
}

#[test]
fn eval_rejects_a_gram_from_another_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    ok(dir, &["gram", "--dataset", "d.csv", "--kernel", "dsk", "--out", "other.bin"]);
    let out =
        quench(dir, &["eval", "--dataset", "d.csv", "--gram", "other.bin", "--model", "m.json", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(1));
    let report = error_report(&out);
    assert!(report["message"].as_str().unwrap().contains("fingerprint mismatch"), "{report}");
    assert!(!dir.join("x.json").exists());
}

#[test]
fn sphere_and_contour_exports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "c.json", 2, 0.6, 8, "dsk");
    ok(dir, &["label", "--config", "c.json", "--out", "d.csv"]);
    ok(dir, &["export", "--kind", "sphere", "--dataset", "d.csv", "--out", "s.csv"]);
    ok(dir, &["export", "--kind", "contour", "--dataset", "d.csv", "--out", "k.csv"]);
    let sphere = csv_rows(&dir.join("s.csv"));
    assert_eq!(sphere.len(), 64);
    for row in &sphere {
        let r: f64 = row[..3].iter().map(|v| v.parse::<f64>().unwrap().powi(2)).sum::<f64>().sqrt();
        assert!((r - 0.6).abs() < 1e-12, "radius {r}");
    }
    let contour = csv_rows(&dir.join("k.csv"));
    assert_eq!(contour.len(), 64);
    let labels: Vec<_> = sphere.iter().map(|r| r[3].clone()).collect();
    assert_eq!(labels, contour.iter().map(|r| r[2].clone()).collect::<Vec<_>>());
}

#[test]
fn traces_show_the_crossing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "c.json", 2, 0.6, 4, "dsk");
    ok(
        dir,
        &[
            "export", "--kind", "traces", "--config", "c.json", "--h", "0.6", "--theta", "1.5pi", "--phi", "0.5pi",
            "--out", "t.csv",
        ],
    );
    let text = fs::read_to_string(dir.join("t.csv")).unwrap();
    assert!(text.starts_with("t,P_plus,P_minus,lambda,m_x\n"));
    let rows: Vec<Vec<f64>> =
        csv_rows(&dir.join("t.csv")).into_iter().map(|r| r.iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    assert!(rows.iter().all(|r| r[3] >= 0.0));
    // P₊ overtakes P₋ somewhere in the window.
    assert!(rows.iter().any(|r| r[1] > r[2]));
}

#[test]
fn sweep_needs_qubit_counts() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "c.json", 2, 0.6, 4, "dsk");
    let out = quench(tmp.path(), &["sweep", "--config", "c.json", "--out", "s.csv", "--n-list"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_report(&out)["error"], "validation");
}

#[test]
fn long_runs_need_consent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "c7.json", 7, 0.6, 4, "dsk");
    let out = quench(dir, &["label", "--config", "c7.json", "--out", "d.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_report(&out)["error"], "resource");
    write_config(dir, "c.json", 2, 0.6, 4, "dsk");
    let out = quench(dir, &["sweep", "--config", "c.json", "--n-list", "2,7", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.join("s.csv").exists());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(quench(tmp.path(), &["export", "--kind", "bogus", "--out", "x"]).status.code(), Some(1));
    assert_eq!(quench(tmp.path(), &["label", "--config", "missing.json", "--out", "d.csv"]).status.code(), Some(1));
    assert_eq!(quench(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn verify_quick_passes_and_injected_fault_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["verify", "--quick", "--out", "v.json"]);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert!(tmp.path().join("v.json").exists());

    let out = quench(tmp.path(), &["verify", "--quick", "--inject-fault", "hermiticity"]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL") && l.contains("hermiticity")), "{stdout}");
    assert!(error_report(&out)["message"].as_str().unwrap().contains("hermiticity"));
}
