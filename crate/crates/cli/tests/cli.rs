use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moreau_cli::{ComparisonRow, RunSummary};
use moreau_core::Algorithm;

fn moreau(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moreau")).args(args).output().expect("spawn moreau")
}

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/tiny.json")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn tiny_config_converges() {
    let dir = tempfile::tempdir().unwrap();
    let o = moreau(&["run", "--config", tiny_config().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: RunSummary = moreau_cli::parse_json(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary.gap.total <= 1e-6, "gap {}", summary.gap.total);
    assert!(summary.gap.qualification_holds);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), summary.iterations + 2);
}

#[test]
fn violated_step_rule_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"problem": {"kind": "inline", "matrix": [[1]], "loss": [{"stack": "l0", "nu": 0.01}], "lambda": 0.05},
            "algorithm": "primal_dual", "solver": {"rho": 21, "sigma": 1.0}}"#,
    );
    let o = moreau(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("σρ‖A‖² < 1"), "{}", stderr(&o));
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\n  \"problem\": {\"kind\": \"inline\"},\n  \"algorithm\": \"primal_dual\",\n  \"colour\": 1\n}");
    let o = moreau(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
    let cfg = write(dir.path(), "typo.json", r#"{"problem": {"kind": "inline", "matrix": [[1]], "loss": [], "lambda": 1}, "algorithm": "primal_dual", "colour": 1}"#);
    let o = moreau(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn budget_exhaustion_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "short.json",
        r#"{"problem": {"kind": "regression", "data": {"m": 30, "n": 3, "outlier_frac": 0.5}},
            "algorithm": "linearized_admm", "solver": {"max_iters": 3}}"#,
    );
    let o = moreau(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "r.json",
        r#"{"problem": {"kind": "regression", "data": {"m": 20, "n": 2, "outlier_frac": 0.3}},
            "algorithm": "primal_dual", "solver": {"max_iters": 50}, "seed": 1}"#,
    );
    let run = |out: &str, seed: Option<&str>| {
        let out = dir.path().join(out);
        let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        moreau(&args);
        fs::read(out.join("trace.csv")).unwrap()
    };
    let a = run("a", None);
    let b = run("b", Some("1"));
    let c = run("c", Some("2"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn gen_data_regression_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("reg");
    let o = moreau(&["gen-data", "regression", "--m", "200", "--n", "10", "--out", out.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::metadata(out.join("A.bin")).unwrap().len(), 200 * 10 * 8);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["matrix"]["rows"], 200);
    assert_eq!(manifest["contents"]["kind"], "regression");
    assert_eq!(manifest["contents"]["outlier_mask"].as_array().unwrap().iter().filter(|x| x.as_bool().unwrap()).count(), 120);
    // idempotent
    let first = (fs::read(out.join("A.bin")).unwrap(), fs::read(out.join("manifest.json")).unwrap());
    moreau(&["gen-data", "regression", "--m", "200", "--n", "10", "--out", out.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(first, (fs::read(out.join("A.bin")).unwrap(), fs::read(out.join("manifest.json")).unwrap()));
}

#[test]
fn gen_data_rejects_outlier_fraction_above_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = moreau(&["gen-data", "regression", "--outlier-frac", "1.5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("outlier_frac"), "{}", stderr(&o));
}

#[test]
fn gen_data_classification_all_labeled_feeds_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ssl");
    let o = moreau(&["gen-data", "classification", "--n", "60", "--d-signal", "3", "--d-noise", "2", "--all-labeled", "--out", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["contents"]["labeled_mask"].as_array().unwrap().iter().all(|x| x.as_bool().unwrap()));
    assert_eq!(manifest["contents"]["holdout"]["rows"], 15);
    let cfg = write(
        dir.path(),
        "run.json",
        r#"{"problem": {"kind": "dataset", "manifest": "ssl/manifest.json"}, "algorithm": "primal_dual", "solver": {"max_iters": 100}}"#,
    );
    let out = dir.path().join("out");
    let o = moreau(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(1), "{}", stderr(&o));
    let summary: RunSummary = moreau_cli::parse_json(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary.test_error.is_some());
}

fn envelope(function: &str, lambda: &str, extra: &[&str]) -> Vec<(f64, f64, f64)> {
    let mut args = vec!["envelope", "--function", function, "--lambda", lambda];
    args.extend(extra);
    let o = moreau(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("v,f,envelope"));
    lines
        .map(|l| {
            let c: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (c[0], c[1], c[2])
        })
        .collect()
}

#[test]
fn l0_envelope_plateaus_at_nu() {
    let rows = envelope(r#"{"stack":"l0","nu":0.01}"#, "0.05", &["--from", "-1", "--to", "1", "--samples", "201"]);
    assert_eq!(rows.len(), 201);
    let kink = (2.0f64 * 0.05 * 0.01).sqrt();
    for (v, f, e) in rows {
        if v.abs() >= kink {
            assert_eq!(e, 0.01, "v = {v}");
        } else {
            assert!((e - v * v / 0.1).abs() <= 1e-15);
        }
        assert_eq!(f, if v == 0.0 { 0.0 } else { 0.01 });
    }
}

#[test]
fn symmetric_hinge_samples_are_symmetric() {
    let rows = envelope(r#"{"stack":"symmetric_hinge"}"#, "0.5", &["--samples", "101"]);
    for (a, b) in rows.iter().zip(rows.iter().rev()) {
        assert_eq!(a.0, -b.0);
        assert_eq!(a.2, b.2);
    }
}

#[test]
fn zero_function_has_zero_envelope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    let o = moreau(&["envelope", "--function", r#"{"stack":"zero"}"#, "--lambda", "0.3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(out).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0,0")));
}

const COMPARE: &str = r#"{"problem": {"kind": "ssl", "data": {"n": 80, "d_signal": 3, "d_noise": 3}},
                          "algorithms": ALGS, "solver": {"max_iters": 400}}"#;

#[test]
fn compare_emits_one_row_per_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &COMPARE.replace("ALGS", r#"["primal_dual", "linearized_admm"]"#));
    let o = moreau(&["compare", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(1), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], ComparisonRow::CSV_HEADER);
    assert_eq!(lines.len(), 3);
    let rows: Vec<ComparisonRow> = moreau_cli::parse_json(&fs::read_to_string(dir.path().join("comparison.json")).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.algorithm).collect::<Vec<_>>(), [Algorithm::PrimalDual, Algorithm::LinearizedAdmm]);
    assert!(rows.iter().all(|r| r.test_error.is_some()));
    assert!(dir.path().join("trace_primal_dual.csv").exists());
    assert!(dir.path().join("trace_linearized_admm.csv").exists());
}

#[test]
fn compare_requires_known_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    for algs in ["[]", r#"["primal_dual", "simplex"]"#] {
        let cfg = write(dir.path(), "c.json", &COMPARE.replace("ALGS", algs));
        let o = moreau(&["compare", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{algs}");
    }
    let cfg = write(dir.path(), "c.json", &COMPARE.replace(r#""algorithms": ALGS, "#, ""));
    let o = moreau(&["compare", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("algorithms"), "{}", stderr(&o));
}

#[test]
fn summary_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    moreau(&["run", "--config", tiny_config().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let text = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let summary: RunSummary = moreau_cli::parse_json(&text).unwrap();
    let again: RunSummary = moreau_cli::parse_json(&serde_json::to_string(&summary).unwrap()).unwrap();
    assert_eq!(summary, again);
    let mut extra: serde_json::Value = serde_json::from_str(&text).unwrap();
    extra["unexpected"] = serde_json::json!(1);
    assert!(moreau_cli::parse_json::<RunSummary>(&extra.to_string()).is_err());
}
