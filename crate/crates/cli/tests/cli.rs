//! End-to-end runs of the `cusp` binary.

use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cusp-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn cusp(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cusp"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("CUSP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_reproduces_semicircle_at_origin() {
    let out = scratch("solve");
    let model = models().join("flat.toml");
    let run = cusp(
        &out,
        &[
            "solve",
            "--model",
            model.to_str().unwrap(),
            "--tau-range",
            "-3:3",
            "--eta",
            "1e-6",
        ],
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let mut reader = csv::Reader::from_path(out.join("density.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["tau", "rho", "eta_eval"]);
    let at_zero = reader
        .records()
        .map(|r| r.unwrap())
        .find(|r| r[0].parse::<f64>().unwrap() == 0.0)
        .expect("grid contains the origin");
    let rho: f64 = at_zero[1].parse().unwrap();
    assert!((rho - 1.0 / std::f64::consts::PI).abs() <= 1e-6);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn classify_reports_a_known_kind() {
    let out = scratch("classify");
    let model = models().join("symmetric_cusp.toml");
    let run = cusp(
        &out,
        &[
            "classify",
            "--model",
            model.to_str().unwrap(),
            "--near",
            "0",
        ],
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let report = read_json(&out.join("classify.json"));
    assert_eq!(report["kind"], "cusp");
    for key in [
        "location",
        "gap",
        "gamma",
        "sigma",
        "eta_f",
        "beta",
        "base_point",
        "t_rho",
        "fit_residual",
    ] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!((report["gamma"].as_f64().unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn quick_verification_passes() {
    let out = scratch("verify");
    let run = cusp(&out, &["verify", "--criteria", "1,3,7"]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stdout)
    );
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert_eq!(stdout.matches("[PASS]").count(), 3);
    let report = read_json(&out.join("verify_report.json"));
    assert_eq!(report["all_passed"], true);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 3);
}

#[test]
fn flow_reports_cusp_time() {
    let out = scratch("flow");
    let model = models().join("open_gap.toml");
    let run = cusp(
        &out,
        &[
            "flow",
            "--model",
            model.to_str().unwrap(),
            "--s-range",
            "1.2:1.45:6",
            "--near",
            "-0.32",
        ],
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let summary = read_json(&out.join("flow_summary.json"));
    assert!((summary["t_star"].as_f64().unwrap() - 1.33296686).abs() < 1e-6);
    let table = std::fs::read_to_string(out.join("flow.csv")).unwrap();
    assert!(table.starts_with("s,e_minus,e_plus,gap,m_min,rho_min"));
    assert_eq!(table.lines().count(), 7);
}

#[test]
fn ensemble_runs_are_bit_identical_for_equal_seeds() {
    let config = models().join("ensemble_flat.toml");
    let hashes = |name: &str, seed: &str| {
        let out = scratch(name);
        let run = cusp(
            &out,
            &[
                "--seed",
                seed,
                "ensemble",
                "run",
                "--config",
                config.to_str().unwrap(),
            ],
        );
        assert!(
            run.status.success(),
            "{}",
            String::from_utf8_lossy(&run.stderr)
        );
        let manifest = read_json(&out.join("manifest.json"));
        (manifest["config_hash"].clone(), manifest["outputs"].clone())
    };
    let first = hashes("ens-a", "5");
    let second = hashes("ens-b", "5");
    let other = hashes("ens-c", "6");
    assert_eq!(first, second);
    assert_eq!(
        first.0, other.0,
        "the seed is not part of the configuration"
    );
    assert_ne!(first.1, other.1);
}

#[test]
fn exit_codes_distinguish_usage_and_validation() {
    let out = scratch("errors");
    assert_eq!(
        cusp(&out, &["solve", "--unknown-flag"]).status.code(),
        Some(1)
    );
    assert_eq!(cusp(&out, &["frobnicate"]).status.code(), Some(1));
    let model = models().join("flat.toml");
    let bad_range = cusp(
        &out,
        &[
            "solve",
            "--model",
            model.to_str().unwrap(),
            "--tau-range",
            "3:-3",
        ],
    );
    assert_eq!(bad_range.status.code(), Some(2));
    let missing = cusp(
        &out,
        &[
            "solve",
            "--model",
            "no/such/model.toml",
            "--tau-range",
            "-1:1",
        ],
    );
    assert_eq!(missing.status.code(), Some(2));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_cusp"))
        .args(["verify", "--criteria", "3"])
        .env("CUSP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn pearcey_kernel_table_and_plot() {
    let out = scratch("pearcey");
    let run = cusp(
        &out,
        &[
            "kernel", "pearcey", "--alpha", "-1", "--grid", "-2:2:5", "--svg",
        ],
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let table = std::fs::read_to_string(out.join("pearcey.csv")).unwrap();
    assert_eq!(table.lines().count(), 26);
    assert!(std::fs::read_to_string(out.join("pearcey_density.svg"))
        .unwrap()
        .contains("<svg"));
}
