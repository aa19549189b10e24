use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn qmix(args: &[&str], config: &Value, dir: &Path) -> Output {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_qmix"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--output")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn coarse() -> Value {
    json!({"n_k": 8, "n_tau": 65, "n_interior_re": 4, "n_interior_im": 9, "n_shell": 17, "n_nyquist": 101})
}

fn penrose_config(kernel: Value, coupling: f64) -> Value {
    json!({
        "schema": 1,
        "penrose": {
            "dim": 3,
            "profile": {"kind": "gaussian", "beta": 1.0},
            "kernel": kernel,
            "coupling": coupling,
            "hbar_set": [0.0, 0.5],
            "k_max": 4.0,
            "lambda_max": 8.0,
            "resolution": coarse(),
            "nyquist_k": [0.5]
        }
    })
}

fn sim_config(kernel: Value, epsilon: f64) -> Value {
    json!({
        "schema": 1,
        "traced_modes": [[0.25]],
        "initial": {"kind": "gaussian", "k_scale": 0.5},
        "simulate": {
            "dim": 1,
            "hbar": 1.0,
            "epsilon": epsilon,
            "profile": {"kind": "gaussian", "beta": 1.0},
            "kernel": kernel,
            "k_max": 1.0,
            "dk": 0.125,
            "eta_max": 4.0,
            "d_eta": 0.25,
            "dt": 0.125,
            "t_final": 2.0,
            "sigma": [0.0, 10.0, 11.6, 12.7, 14.3],
            "n0": 18.0
        }
    })
}

#[test]
fn penrose_zero_kernel_margin_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmix(&["penrose"], &penrose_config(json!({"kind": "zero"}), 1.0), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&read(dir.path(), "penrose_report.json")).unwrap();
    assert_eq!(report["kappa"].as_f64().unwrap(), 1.0);
    assert_eq!(report["stable"], json!(true));
    let curve = read(dir.path(), "nyquist_0.5_0.5.csv");
    assert!(curve.starts_with("tau,re_l,im_l\n"));
    assert!(curve.lines().last().unwrap().starts_with("# meta: schema=1 config_sha256="));
}

#[test]
fn penrose_unstable_kernel_exits_zero_with_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmix(&["penrose"], &penrose_config(json!({"kind": "yukawa", "alpha": 1.0}), -5.0), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&read(dir.path(), "penrose_report.json")).unwrap();
    assert_eq!(report["stable"], json!(false));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = penrose_config(json!({"kind": "zero"}), 1.0);
    config["penrose"]["k_maxx"] = json!(1.0);
    let out = qmix(&["penrose"], &config, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("penrose"), "{err}");
}

#[test]
fn missing_block_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmix(&["linear"], &json!({"schema": 1}), dir.path());
    assert_eq!(out.status.code(), Some(2));
}

fn linear_config(kernel: Value, coupling: f64) -> Value {
    json!({
        "schema": 1,
        "traced_modes": [[0.5, 0.0, 0.0]],
        "initial": {"kind": "gaussian"},
        "linear": {
            "dim": 3,
            "hbar": 0.5,
            "profile": {"kind": "gaussian", "beta": 1.0},
            "kernel": kernel,
            "coupling": coupling,
            "dt": 0.05,
            "t_final": 4.0
        }
    })
}

#[test]
fn linear_zero_kernel_matches_free() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmix(&["linear"], &linear_config(json!({"kind": "zero"}), 1.0), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "linear_0.5_0_0.csv");
    assert!(csv.starts_with("t,re_volterra,im_volterra,re_green,im_green,abs_free\n"));
    for row in data_rows(&csv) {
        let v = (row[1] * row[1] + row[2] * row[2]).sqrt();
        assert!((v - row[5]).abs() < 1e-14, "{row:?}");
    }
    assert!(csv.contains("# max_relative_gap: "));
}

#[test]
fn linear_stable_routes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmix(&["linear"], &linear_config(json!({"kind": "yukawa", "alpha": 1.0}), 1.0), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "linear_0.5_0_0.csv");
    let gap: f64 = csv
        .lines()
        .find_map(|l| l.strip_prefix("# max_relative_gap: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(gap < 1e-4, "gap {gap}");
}

#[test]
fn linear_unstable_refused_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmix(&["linear"], &linear_config(json!({"kind": "yukawa", "alpha": 1.0}), -5.0), dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn simulate_zero_amplitude_gives_zero_density() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmix(&["simulate"], &sim_config(json!({"kind": "gaussian", "width": 1.0}), 0.0), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "density.csv");
    assert!(csv.starts_with("t,re_0.25,im_0.25,re_linear_0.25,im_linear_0.25\n"));
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 17);
    assert!(rows.iter().all(|r| r[1] == 0.0 && r[2] == 0.0));
    for name in ["monitors.csv", "scattering.json", "warnings.log"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn simulate_zero_kernel_follows_free_slice() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmix(&["simulate"], &sim_config(json!({"kind": "zero"}), 0.1), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for row in data_rows(&read(dir.path(), "density.csv")) {
        let (t, re) = (row[0], row[1]);
        let free = 0.1 * (-(0.25f64 * 0.25) / 0.25 - (0.25 * t) * (0.25 * t)).exp();
        // spline interpolation error on the η grid
        assert!((re - free).abs() < 1e-3 * 0.1, "t = {t}: {re} vs {free}");
        assert!((row[3] - free).abs() < 1e-12 && row[4].abs() < 1e-12, "t = {t}: linear {}", row[3]);
    }
}

#[test]
fn simulate_is_bit_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = sim_config(json!({"kind": "gaussian", "width": 1.0}), 0.05);
    assert!(qmix(&["simulate"], &config, a.path()).status.success());
    assert!(qmix(&["simulate"], &config, b.path()).status.success());
    for name in ["density.csv", "monitors.csv", "scattering.json"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn sweep_with_zero_kernel_has_zero_distances() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = sim_config(json!({"kind": "zero"}), 0.1);
    config["hbar_sweep"] = json!([0.5, 0.25]);
    let out = qmix(&["sweep-hbar"], &config, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "sweep.csv");
    assert!(csv.starts_with("hbar,density_distance,scattering_distance,local_order\n"));
    let rows = data_rows(&csv);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![0.5, 0.25, 0.0]);
    assert!(rows.iter().all(|r| r[1] == 0.0 && r[2] == 0.0));
}
