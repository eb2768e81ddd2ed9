use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fme_core::io::{read_curves, read_scalars};
use tempfile::TempDir;

fn fme(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fme")).current_dir(dir).args(args).output().expect("spawn fme")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fme(dir, args);
    assert!(out.status.success(), "fme {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_defaults_and_determinism() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["simulate", "--out-dir", "a"]);
    ok(t.path(), &["simulate", "--out-dir", "b"]);
    let w = fs::read_to_string(t.path().join("a/W.csv")).unwrap();
    assert_eq!(w.lines().count(), 101);
    assert!(w.lines().all(|l| l.split(',').count() == 100));
    for f in ["W.csv", "y.csv", "truth.json"] {
        assert_eq!(fs::read(t.path().join("a").join(f)).unwrap(), fs::read(t.path().join("b").join(f)).unwrap(), "{f}");
    }
    let curves = read_curves(&t.path().join("a/W.csv")).unwrap();
    assert_eq!(fme_core::io::curves_to_string(&curves), w);
}

#[test]
fn no_error_gives_w_equal_x() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["simulate", "--error", "none", "--latent", "--n", "20", "--out-dir", "s"]);
    assert_eq!(fs::read(t.path().join("s/W.csv")).unwrap(), fs::read(t.path().join("s/X.csv")).unwrap());
}

#[test]
fn rank_single_vote_and_m1_mode() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["simulate", "--model", "M1", "--out-dir", "s"]);
    ok(t.path(), &["rank", "--input", "s/W.csv", "--B", "1", "--out", "one.json"]);
    let one = json(&t.path().join("one.json"));
    assert_eq!(one["result"]["per_iteration"].as_array().unwrap().len(), 1);
    assert_eq!(one["rank"], one["result"]["per_iteration"][0]);
    let stdout = ok(t.path(), &["rank", "--input", "s/W.csv"]);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["rank"], 3);
    assert_eq!(report["result"]["b"], 100);
}

#[test]
fn essential_rank_on_m4() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["simulate", "--model", "M4", "--delta", "0.1", "--out-dir", "s"]);
    let out = ok(t.path(), &["rank", "--essential", "--input", "s/W.csv", "--out", "r.json"]);
    assert!(out.contains("rank 4"), "{out}");
    let r = json(&t.path().join("r.json"));
    assert_eq!(r["result"]["c2"], 50.0);
}

#[test]
fn malformed_csv_names_row_and_column() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("bad.csv"), "0.1,0.6\n1,2\n3,x\n").unwrap();
    let out = fme(t.path(), &["rank", "--input", "bad.csv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3, column 2"), "{err}");
}

#[test]
fn exact_fit_predicts_training_data() {
    let t = TempDir::new().unwrap();
    let mut spec = serde_json::to_value(fme_core::simulation::ModelSpec::canonical(fme_core::simulation::Model::M1)).unwrap();
    spec["noise_sd"] = 0.0.into();
    fs::write(t.path().join("spec.json"), spec.to_string()).unwrap();
    ok(t.path(), &["simulate", "--spec", "spec.json", "--error", "none", "--out-dir", "s"]);
    ok(t.path(), &["fit", "--input", "s/W.csv", "--response", "s/y.csv", "--rank", "3", "--out-dir", "f"]);
    let out = ok(t.path(), &["predict", "--fit", "f/fit.json", "--input", "s/W.csv", "--actual", "s/y.csv", "--out", "p.csv"]);
    let r2: f64 = out.lines().find_map(|l| l.strip_prefix("R^2 ")).unwrap().parse().unwrap();
    assert!((r2 - 1.0).abs() < 1e-6, "{r2}");
    let p = read_scalars(&t.path().join("p.csv")).unwrap();
    let y = read_scalars(&t.path().join("s/y.csv")).unwrap();
    assert!(p.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-4));
    assert!(t.path().join("f/beta.csv").exists());
}

#[test]
fn rc_beats_st_on_m2() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["simulate", "--model", "M2", "--delta", "0.1", "--out-dir", "s"]);
    let err = |out: String| -> f64 {
        out.lines().find_map(|l| l.strip_prefix("L2 error vs truth ")).unwrap().parse().unwrap()
    };
    let rc = err(ok(t.path(), &["fit", "--input", "s/W.csv", "--response", "s/y.csv", "--out-dir", "rc"]));
    let st_out = ok(t.path(), &["fit", "--input", "s/W.csv", "--response", "s/y.csv", "--method", "st", "--out-dir", "st"]);
    assert!(st_out.contains("chosen k = "));
    assert!(rc < err(st_out), "rc {rc}");
}

#[test]
fn truth_grid_mismatch_is_an_error() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["simulate", "--n", "30", "--out-dir", "a"]);
    ok(t.path(), &["simulate", "--n", "30", "--seed", "5", "--out-dir", "b"]);
    let out = fme(
        t.path(),
        &["fit", "--input", "a/W.csv", "--response", "a/y.csv", "--method", "st", "--k", "3", "--truth", "b/truth.json"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn config_file_supplies_defaults() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("cfg.json"), r#"{"simulate": {"n": 12, "model": "M2", "out_dir": "c"}}"#).unwrap();
    ok(t.path(), &["--config", "cfg.json", "simulate"]);
    assert_eq!(read_scalars(&t.path().join("c/y.csv")).unwrap().len(), 12);
    ok(t.path(), &["simulate", "--config", "cfg.json", "--n", "7"]);
    assert_eq!(read_scalars(&t.path().join("c/y.csv")).unwrap().len(), 7);
    let truth = json(&t.path().join("c/truth.json"));
    assert_eq!(truth["model"]["family"], "gram-schmidt-m2");
}

#[test]
fn compare_single_scenario() {
    let t = TempDir::new().unwrap();
    let out = ok(
        t.path(),
        &["compare", "--models", "M1", "--deltas", "0.05", "--methods", "rc", "--reps", "1", "--b", "10", "--out-dir", "c"],
    );
    assert!(out.contains("M1"));
    let table = fs::read_to_string(t.path().join("c/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.starts_with("model,error,delta,n,method,seed,rank,l2_error,runtime"));
    let summary = json(&t.path().join("c/summary.json"));
    assert_eq!(summary[0]["replicates"], 1);
}

#[test]
fn compare_rate_study_reports_slope() {
    let t = TempDir::new().unwrap();
    ok(
        t.path(),
        &[
            "compare", "--models", "M1", "--deltas", "0.05", "--methods", "rc", "--rank", "3", "--ns", "100,400",
            "--reps", "2", "--out-dir", "c",
        ],
    );
    let summary = json(&t.path().join("c/summary.json"));
    assert_eq!(summary.as_array().unwrap().len(), 2);
    assert!(summary[0]["loglog_slope"].as_f64().unwrap().is_finite());
    assert_eq!(summary[0]["loglog_slope"], summary[1]["loglog_slope"]);
}

#[test]
fn analyze_self_regression() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["simulate", "--model", "M1", "--error", "none", "--l", "40", "--out-dir", "s"]);
    let out = ok(
        t.path(),
        &["analyze", "--covariate", "s/W.csv", "--response", "s/W.csv", "--b", "20", "--cv-reps", "20", "--out-dir", "a"],
    );
    assert!(out.contains("delta* = 0.05"), "{out}");
    let report = json(&t.path().join("a/report.json"));
    assert!((report["r_squared_rc"].as_f64().unwrap() - 1.0).abs() < 1e-6, "{report}");
    for f in ["decontaminated.csv", "error_variance.csv", "rc_kernel.csv", "st_kernel.csv"] {
        assert!(t.path().join("a").join(f).exists(), "{f}");
    }
    let ev = read_curves(&t.path().join("a/error_variance.csv")).unwrap();
    assert!(ev.data().iter().all(|v| *v >= 0.0));
}

#[test]
fn analyze_rejects_mismatched_n() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["simulate", "--n", "20", "--out-dir", "a"]);
    ok(t.path(), &["simulate", "--n", "25", "--out-dir", "b"]);
    let out = fme(t.path(), &["analyze", "--covariate", "a/W.csv", "--response", "b/W.csv"]);
    assert!(!out.status.success());
}

#[test]
fn threads_from_environment() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["simulate", "--n", "30", "--out-dir", "s"]);
    let a = Command::new(env!("CARGO_BIN_EXE_fme"))
        .current_dir(t.path())
        .env("FME_THREADS", "2")
        .args(["rank", "--input", "s/W.csv", "--b", "8"])
        .output()
        .unwrap();
    assert!(a.status.success());
    let b = ok(t.path(), &["rank", "--input", "s/W.csv", "--b", "8", "--threads", "1"]);
    assert_eq!(String::from_utf8(a.stdout).unwrap(), b);
}
