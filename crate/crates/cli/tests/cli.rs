//! End-to-end runs of the installed binary: exit codes, JSON reports, and
//! the experiment driver's files on disk.

use cepam_core::privacy::PrivacyProfile;
use serde_json::Value;
use std::path::PathBuf;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cepam"))
        .args(args)
        .env_remove("CEPAM_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cepam-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_CONFIG: &str = r#"
[experiment]
schemes = ["fl", "cepam-gaussian"]
seeds = [1, 2]
rounds = 2
local_iters = 3
clients = 3

[model]
layers = [8, 6, 3]

[data]
source = "synthetic"
train = 60
val = 20
test = 20
synthetic_dim = 8
synthetic_classes = 3
"#;

#[test]
fn quantize_bench_matches_the_planar_acceptance_rate() {
    let out = run(&[
        "quantize-bench",
        "--dim",
        "2",
        "--sigma",
        "1",
        "--alpha",
        "1e-5",
        "--samples",
        "100000",
        "--seed",
        "11",
    ]);
    let report = json_stdout(&out);
    let expected = report["acceptance_rate_expected"].as_f64().unwrap();
    assert!((expected - std::f64::consts::PI / 4.0).abs() < 1e-15);
    let measured = report["acceptance_rate_measured"].as_f64().unwrap();
    assert!(
        (measured - expected).abs() < 0.004,
        "acceptance {measured} vs {expected}"
    );
    assert!(report["error_mean"].as_f64().unwrap().abs() < 0.01);
    let var = report["error_variance"].as_f64().unwrap();
    assert!((var - 1.0).abs() < 0.02, "variance {var}");
    assert!(report["ks_vs_target"].as_f64().unwrap() < 0.01);
    assert_eq!(report["mechanism"], "gaussian");
}

#[test]
fn quantize_bench_laplace_accepts_on_the_first_trial() {
    let out = run(&["quantize-bench", "--b", "0.5", "--samples", "20000"]);
    let report = json_stdout(&out);
    assert_eq!(report["mechanism"], "laplace");
    assert_eq!(report["mean_trials"].as_f64().unwrap(), 1.0);
    assert_eq!(report["acceptance_rate_measured"].as_f64().unwrap(), 1.0);
    let var = report["error_variance"].as_f64().unwrap();
    assert!((var - 0.5).abs() < 0.02, "variance {var}");
}

#[test]
fn conflicting_or_unknown_flags_exit_with_usage_error() {
    let out = run(&["quantize-bench", "--sigma", "1", "--b", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["quantize-bench", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn privacy_gaussian_single_iteration_matches_plain_subsampling() {
    let out = run(&[
        "privacy",
        "gaussian",
        "--sigma",
        "1.0",
        "--clip",
        "0.1",
        "--local-iters",
        "1",
        "--clients",
        "30",
        "--dataset-size",
        "2000",
        "--eps-base",
        "2.0",
    ]);
    let report = json_stdout(&out);
    let sens = 2.0 * 0.1 / 30.0;
    let scale = 1.0 / 30f64.sqrt();
    let base = PrivacyProfile::gaussian(sens, scale)
        .unwrap()
        .delta(2.0)
        .unwrap();
    let delta = report["delta"].as_f64().unwrap();
    assert!(
        (delta - base / 2000.0).abs() <= 1e-15 * base,
        "delta {delta} vs {}",
        base / 2000.0
    );
}

#[test]
fn privacy_laplace_reports_zero_delta_when_the_budget_covers_the_ratio() {
    let out = run(&[
        "privacy",
        "laplace",
        "--b",
        "0.001",
        "--clip",
        "1.0",
        "--dataset-size",
        "2000",
        "--eps-base",
        "30000",
    ]);
    let report = json_stdout(&out);
    assert_eq!(report["delta"].as_f64().unwrap(), 0.0);
    let eps = report["eps"].as_f64().unwrap();
    assert!((eps - 29995.1).abs() < 0.01, "eps {eps}");
}

#[test]
fn calibrate_output_reproduces_itself_through_the_gaussian_command() {
    let out = run(&[
        "privacy",
        "calibrate",
        "--eps",
        "1",
        "--delta",
        "0.01",
        "--dataset-size",
        "600",
    ]);
    let report = json_stdout(&out);
    let sigma = report["sigma"].as_f64().unwrap();
    let achieved = &report["achieved"];
    let delta = achieved["delta"].as_f64().unwrap();
    assert!(delta <= 0.01, "calibrated delta {delta} exceeds the target");
    assert!(
        (delta - 0.01).abs() / 0.01 < 1e-6,
        "delta {delta} far from target"
    );
    assert!((achieved["eps"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let eps_base = achieved["eps_base"].as_f64().unwrap();
    let out = run(&[
        "privacy",
        "gaussian",
        "--sigma",
        &format!("{sigma:.17e}"),
        "--clip",
        "0.1",
        "--local-iters",
        "15",
        "--clients",
        "30",
        "--dataset-size",
        "600",
        "--eps-base",
        &format!("{eps_base:.17e}"),
    ]);
    let refed = json_stdout(&out);
    let redelta = refed["delta"].as_f64().unwrap();
    assert!(
        ((redelta - delta) / delta).abs() < 1e-6,
        "refed delta {redelta} vs {delta}"
    );
}

#[test]
fn calibrate_rejects_targets_above_the_amplification_floor() {
    let out = run(&[
        "privacy",
        "calibrate",
        "--eps",
        "1",
        "--delta",
        "0.01",
        "--dataset-size",
        "2000",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("target"), "stderr: {err}");
}

#[test]
fn simulate_runs_are_reproducible_and_thread_count_invariant() {
    let dir = scratch_dir("repro");
    let cfg_path = dir.join("exp.toml");
    std::fs::write(&cfg_path, TINY_CONFIG).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let mut outputs = Vec::new();
    for (sub, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out_dir = dir.join(sub);
        let out = run(&[
            "simulate",
            "--config",
            cfg,
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--parallel-clients",
            threads,
        ]);
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push(std::fs::read(out_dir.join("metrics.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "same run must be byte-identical");
    assert_eq!(outputs[0], outputs[2], "threading must not change results");

    let summary: Value =
        serde_json::from_slice(&std::fs::read(dir.join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
    assert_eq!(summary[0]["scheme"], "fl");
    assert_eq!(summary[0]["seeds"], serde_json::json!([1, 2]));
}

#[test]
fn simulate_scheme_all_covers_every_pipeline() {
    let dir = scratch_dir("all");
    let cfg_path = dir.join("exp.toml");
    std::fs::write(&cfg_path, TINY_CONFIG).unwrap();
    let out = run(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "9",
        "--scheme",
        "all",
        "--out-dir",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.join("out/metrics.csv")).unwrap();
    for name in [
        "fl",
        "fl-sdq",
        "fl-noise-gaussian",
        "fl-noise-laplace",
        "fl-noise-sdq-gaussian",
        "fl-noise-sdq-laplace",
        "cepam-gaussian",
        "cepam-laplace",
    ] {
        assert!(
            csv.contains(&format!(",{name},9,")),
            "{name} missing from csv"
        );
    }
    for line in csv.lines().skip(1) {
        assert_eq!(line.split(',').nth(2), Some("9"), "seed override ignored");
    }
}

#[test]
fn simulate_rejects_misspelled_config_keys() {
    let dir = scratch_dir("badkey");
    let cfg_path = dir.join("exp.toml");
    std::fs::write(&cfg_path, "[experiment]\nruonds = 3\n").unwrap();
    let out = run(&["simulate", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ruonds"), "stderr: {err}");
}

#[test]
fn simulate_warns_and_degrades_to_synthetic_when_mnist_is_absent() {
    let dir = scratch_dir("fallback");
    let cfg_path = dir.join("exp.toml");
    std::fs::write(
        &cfg_path,
        TINY_CONFIG.replace("source = \"synthetic\"", "source = \"mnist\""),
    )
    .unwrap();
    let empty = dir.join("nodata");
    std::fs::create_dir_all(&empty).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cepam"))
        .args([
            "simulate",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "3",
            "--scheme",
            "fl",
            "--out-dir",
            dir.join("out").to_str().unwrap(),
        ])
        .env("CEPAM_DATA_DIR", &empty)
        .output()
        .unwrap();
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("synthetic"), "stderr: {err}");
    assert!(dir.join("out/metrics.csv").exists());
}
