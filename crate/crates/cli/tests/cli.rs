use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn qmri(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmri")).args(args).output().expect("binary runs")
}

fn qmri_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmri")).args(args).env(key, value).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

/// Two discs whose parameters lie on a small dictionary grid.
fn on_grid_config(out: &str) -> Value {
    json!({
        "phantom": {"spec": {"n": 16, "regions": [
            {"cx": 0.0, "cy": 0.0, "a": 0.8, "b": 0.7, "t1": 900.0, "t2": 90.0, "rho": 85.0},
            {"cx": 0.2, "cy": -0.1, "a": 0.3, "b": 0.3, "t1": 2100.0, "t2": 210.0, "rho": 95.0}
        ]}},
        "sequence": {"L": 12, "alpha": 30, "TR": 15},
        "sampling": {"kind": "full"},
        "dictionary": {"grid": {"t1": [600, 300, 3000], "t2": [60, 30, 300]}},
        "domain": {"mask": format!("{out}/truth/mask.csv")},
        "output": out
    })
}

fn read_grid(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect()
}

#[test]
fn noiseless_simulation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &on_grid_config("a"));
    let first = qmri(&["simulate", cfg.to_str().unwrap()]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("SNR: inf"));
    let b = dir.path().join("b");
    let second = qmri(&["simulate", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(second.status.success(), "{}", stderr(&second));
    let ka = fs::read(dir.path().join("a/kspace.bin")).unwrap();
    let kb = fs::read(b.join("kspace.bin")).unwrap();
    assert_eq!(ka, kb);
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/kspace.json")).unwrap()).unwrap();
    assert_eq!(sidecar["mask"]["kind"], "full");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn noise_seed_override_changes_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = on_grid_config("a");
    value["noise"] = json!({"sigma": 0.5, "seed": 1});
    let cfg = write_config(dir.path(), "run.json", &value);
    let cfg = cfg.to_str().unwrap();
    let a = qmri(&["simulate", cfg]);
    assert!(a.status.success(), "{}", stderr(&a));
    let snr: f64 = stdout(&a).lines().find_map(|l| l.strip_prefix("SNR: ")).unwrap().parse().unwrap();
    assert!(snr.is_finite() && snr > 0.0);
    let b_dir = dir.path().join("b");
    let b = qmri(&["simulate", cfg, "--seed", "2", "--out", b_dir.to_str().unwrap()]);
    assert!(b.status.success());
    assert_ne!(fs::read(dir.path().join("a/kspace.bin")).unwrap(), fs::read(b_dir.join("kspace.bin")).unwrap());
}

#[test]
fn target_snr_is_hit() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = on_grid_config("a");
    value["noise"] = json!({"snr": 35.0, "seed": 4});
    let cfg = write_config(dir.path(), "run.json", &value);
    let out = qmri(&["simulate", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let snr: f64 = stdout(&out).lines().find_map(|l| l.strip_prefix("SNR: ")).unwrap().parse().unwrap();
    assert!((snr - 35.0).abs() < 1e-3, "{snr}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = on_grid_config("a");
    value.as_object_mut().unwrap().remove("phantom");
    let cfg = write_config(dir.path(), "no_phantom.json", &value);
    let out = qmri(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("phantom"), "{}", stderr(&out));

    value["phantom"] = json!({"file": "missing.json"});
    let cfg = write_config(dir.path(), "missing.json.cfg", &value);
    let out = qmri(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("phantom.file"), "{}", stderr(&out));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"sequence\": {\"L\": 3, \"alpha\": 10, \"TR\": 10},\n  \"output\": 5\n}").unwrap();
    let out = qmri(&["simulate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let out = qmri(&["simulate", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_config(dir.path(), "ok.json", &on_grid_config("a"));
    let out = qmri_env(&["simulate", cfg.to_str().unwrap()], "QMRI_THREADS", "zero");
    assert_eq!(out.status.code(), Some(2));
    let out = qmri(&["reconstruct", cfg.to_str().unwrap(), "--method", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sequence_length_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let value = on_grid_config("a");
    let cfg = write_config(dir.path(), "run.json", &value);
    assert!(qmri(&["simulate", cfg.to_str().unwrap()]).status.success());
    let mut other = value.clone();
    other["sequence"]["L"] = json!(10);
    other["method"] = json!({"name": "mrf"});
    let cfg = write_config(dir.path(), "short.json", &other);
    let out = qmri(&["reconstruct", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("frames"), "{}", stderr(&out));
}

#[test]
fn mrf_recovers_on_grid_phantom_and_compare_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = on_grid_config("a");
    value["dictionary"]["path"] = json!("a/dictionary.bin");
    let cfg = write_config(dir.path(), "run.json", &value);
    let cfg = cfg.to_str().unwrap();
    assert!(qmri(&["simulate", cfg]).status.success());
    let d = qmri(&["dict", cfg]);
    assert!(d.status.success(), "{}", stderr(&d));
    assert!(dir.path().join("a/dictionary.bin").exists());
    let r = qmri(&["reconstruct", cfg, "--method", "mrf"]);
    assert!(r.status.success(), "{}", stderr(&r));

    let truth = dir.path().join("a/truth");
    let run = dir.path().join("a/mrf");
    assert_eq!(read_grid(&run.join("t1.csv")), read_grid(&truth.join("t1.csv")));
    assert_eq!(read_grid(&run.join("t2.csv")), read_grid(&truth.join("t2.csv")));
    for (a, b) in read_grid(&run.join("rho_re.csv")).iter().zip(read_grid(&truth.join("rho_re.csv"))) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    let out = qmri(&["compare", truth.to_str().unwrap(), truth.to_str().unwrap(), run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,time_s,err_T1,err_T2,err_rho");
    assert!(lines[1].starts_with("truth,,0.000000e0,0.000000e0,0.000000e0"), "{}", lines[1]);
    assert!(lines[2].starts_with("MRF,"));
}

#[test]
fn lm_from_truth_stops_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = on_grid_config("a");
    value["sampling"] = json!({"kind": "cartesian", "s": 2});
    value["method"] = json!({"name": "lm", "init": {"path": "a/truth"}});
    let cfg = write_config(dir.path(), "run.json", &value);
    let cfg = cfg.to_str().unwrap();
    assert!(qmri(&["simulate", cfg]).status.success());
    let out = qmri(&["reconstruct", cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = dir.path().join("a/lm");
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("0,0.00000000000000000e0"), "{report}");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["details"]["termination"], "zero_residual");
    assert_eq!(manifest["label"], "Proposed");
}

#[test]
fn blip_reports_one_row_per_iteration_and_lm_initializes_itself() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = on_grid_config("a");
    value["sampling"] = json!({"kind": "cartesian", "s": 2});
    value["method"] = json!({"name": "blip", "blip": {"iterations": 20}});
    let cfg = write_config(dir.path(), "run.json", &value);
    let cfg_s = cfg.to_str().unwrap();
    assert!(qmri(&["simulate", cfg_s]).status.success());
    let out = qmri(&["reconstruct", cfg_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = fs::read_to_string(dir.path().join("a/blip/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 21);

    value["method"] = json!({"name": "lm", "solver": {"max_iters": 3},
        "init": {"grid": {"t1": [600, 300, 3000], "t2": [60, 30, 300]}, "blip": {"iterations": 5}}});
    let cfg = write_config(dir.path(), "lm.json", &value);
    let out = qmri(&["reconstruct", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("a/initial/t1.csv").exists());
    assert!(dir.path().join("a/lm/ratios.csv").exists());
    let initial: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/initial/manifest.json")).unwrap()).unwrap();
    assert_eq!(initial["label"], "Initial");

    let truth = dir.path().join("a/truth");
    let table = qmri(&[
        "compare",
        truth.to_str().unwrap(),
        dir.path().join("a/initial").to_str().unwrap(),
        dir.path().join("a/blip").to_str().unwrap(),
        dir.path().join("a/lm").to_str().unwrap(),
        "--out",
        dir.path().join("table.csv").to_str().unwrap(),
    ]);
    assert!(table.status.success(), "{}", stderr(&table));
    let labels: Vec<String> = fs::read_to_string(dir.path().join("table.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(labels, vec!["Initial", "BLIP", "Proposed"]);
}

#[test]
fn compare_rejects_grid_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let value = on_grid_config("a");
    let cfg = write_config(dir.path(), "run.json", &value);
    assert!(qmri(&["simulate", cfg.to_str().unwrap()]).status.success());
    let mut small = value.clone();
    small["phantom"] = json!({"desk": {"n": 8}});
    let cfg = write_config(dir.path(), "small.json", &small);
    assert!(qmri(&["simulate", cfg.to_str().unwrap(), "--out", dir.path().join("b").to_str().unwrap()]).status.success());
    let out = qmri(&[
        "compare",
        dir.path().join("a/truth").to_str().unwrap(),
        dir.path().join("b/truth").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
