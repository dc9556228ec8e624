use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TOY: &str = "family = \"bernoulli\"\npre = [0.5]\npost = [0.75]\n";

fn write_config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn quickdetect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quickdetect")).args(args).output().unwrap()
}

fn run_config(sub: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    quickdetect(&args)
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn calibrate_toy_hits_exact_arl() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.toml", &format!("{TOY}rule = \"sr\"\nB = 2\nseed = 5\n"));
    let out = run_config("calibrate", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let arl = v["arl_estimate"].as_f64().unwrap();
    assert!((1.96..=2.04).contains(&arl), "{arl}");
    assert_eq!(v["kind"], "sr");
    assert!(v["A"].as_f64().unwrap() <= 2.0 * 1.02);
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.toml", &format!("{TOY}rule = \"sr\"\nthreshold = 1.4\nn_reps = 4000\nseed = 8\n"));
    let a = run_config("oc", &cfg, &["--threads", "1"]);
    let b = run_config("oc", &cfg, &["--threads", "3"]);
    let c = run_config("oc", &cfg, &[]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);

    let cal = write_config(&dir, "cal.toml", &format!("{TOY}rule = \"sr\"\nB = 2\nseed = 8\n"));
    assert_eq!(run_config("calibrate", &cal, &["--threads", "1"]).stdout, run_config("calibrate", &cal, &["--threads", "2"]).stdout);
}

#[test]
fn seed_flag_changes_the_draws() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.toml", &format!("{TOY}rule = \"sr\"\nB = 2\nseed = 8\n"));
    let a = run_config("calibrate", &cfg, &["--seed", "1"]);
    let b = run_config("calibrate", &cfg, &["--seed", "2"]);
    assert_ne!(a.stdout, b.stdout);
    assert_eq!(json(&a)["seed"], 1);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let cases = [
        format!("{TOY}rule = \"sr\"\nseed = 1\n"),
        format!("{TOY}rule = \"sr\"\nB = 2\n"),
        format!("{TOY}rule = \"sr\"\nB = 2\nthreshold = 1.4\nseed = 1\n"),
        format!("{TOY}rule = \"sr\"\nB = 2\nseed = 1\ntreshold = 2\n"),
        format!("{TOY}rule = \"page\"\nB = 2\nseed = 1\n"),
    ];
    for (i, body) in cases.iter().enumerate() {
        let cfg = write_config(&dir, &format!("bad{i}.toml"), body);
        let out = run_config("calibrate", &cfg, &[]);
        assert_eq!(out.status.code(), Some(1), "{body}");
        assert!(!out.stderr.is_empty());
    }
    let single = write_config(&dir, "single.toml", &format!("{TOY}rule = \"sr\"\nB = 2\nseed = 1\n"));
    assert_eq!(run_config("compare", &single, &[]).status.code(), Some(1));
    assert_eq!(quickdetect(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(quickdetect(&["verify"]).status.code(), Some(1));
    assert_eq!(quickdetect(&["verify", "--seed", "1", "--profile", "slow"]).status.code(), Some(1));
}

#[test]
fn unreachable_band_exits_with_two() {
    let dir = TempDir::new().unwrap();
    // The toy ARL jumps from 2 to 3.5 at A = 1.5; nothing lands within 1% of 2.5.
    let cfg = write_config(&dir, "c.toml", &format!("{TOY}rule = \"sr\"\nB = 2.5\nrel_tol = 0.01\nseed = 1\n"));
    let out = run_config("calibrate", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration"));
}

#[test]
fn oc_writes_csv_and_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.toml", &format!("{TOY}rule = \"sr\"\nthreshold = 1.4\nn_reps = 20000\nseed = 3\n"));
    let csv_path = dir.path().join("oc.csv");
    let out = run_config("oc", &cfg, &["--out", csv_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("rule,metric,k,estimate,std_err,n_reps,seed"));
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 7, "{line}");
        let digits = fields[3].chars().filter(char::is_ascii_digit).collect::<String>();
        assert!(digits.trim_start_matches('0').len() <= 17 && digits.len() >= 17, "{line}");
        assert_eq!(fields[6], "3");
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("oc.json")).unwrap()).unwrap();
    let integral = &summary["integral_add"];
    let stationary = &summary["stationary_add"];
    assert!((integral["value"].as_f64().unwrap() - 2.0 / 3.0).abs() <= 4.0 * integral["std_err"].as_f64().unwrap());
    assert!((stationary["value"].as_f64().unwrap() - 1.0 / 3.0).abs() <= 4.0 * stationary["std_err"].as_f64().unwrap());
    assert!(summary["survival_at_horizon"].as_f64().unwrap() < 1e-4);
}

#[test]
fn instant_detection_has_no_delay() {
    let dir = TempDir::new().unwrap();
    let body = "family = \"bernoulli\"\npre = [0.5]\npost = [0.999999999999]\nrule = \"sr\"\nthreshold = 1.5\nn_reps = 2000\nseed = 4\n";
    let cfg = write_config(&dir, "c.toml", body);
    let out = run_config("oc", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let (summary, _) = text.split_once("\n\n").unwrap();
    let v: Value = serde_json::from_str(summary).unwrap();
    for key in ["integral_add", "integral_add_cm", "stationary_add", "stationary_add_formula"] {
        assert!(v[key]["value"].as_f64().unwrap().abs() < 1e-6, "{key}: {}", v[key]);
    }
}

#[test]
fn compare_ranks_sr_first_and_accepts_identical_rules() {
    let dir = TempDir::new().unwrap();
    let gauss = "family = \"gaussian\"\npre = [0.0]\npost = [1.0]\nB = 100\nseed = 12\n";
    let cfg = write_config(&dir, "c.toml", &format!("{gauss}rules = [\"sr\", \"cusum\"]\nn_reps = 20000\n"));
    let csv_path = dir.path().join("cmp.csv");
    let out = run_config("compare", &cfg, &["--out", csv_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmp.json")).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    let sr = rows[0]["integral_add"]["value"].as_f64().unwrap();
    let cusum = rows[1]["integral_add"]["value"].as_f64().unwrap();
    assert!(sr < cusum, "{sr} vs {cusum}");
    assert!(v["violations"].as_array().unwrap().is_empty());

    let same = write_config(&dir, "same.toml", &format!("{gauss}rules = [\"sr\", \"sr\"]\nn_reps = 4000\n"));
    let out = run_config("compare", &same, &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let (summary, _) = text.split_once("\n\n").unwrap();
    let v: Value = serde_json::from_str(summary).unwrap();
    assert!(v["violations"].as_array().unwrap().is_empty());
}

#[test]
fn multicyclic_toy_delay() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.toml", &format!("{TOY}rule = \"sr\"\nthreshold = 1.4\nnu = 20\nn_reps = 20000\nseed = 6\n"));
    let out = run_config("multicyclic", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let (summary, csv) = text.split_once("\n\n").unwrap();
    let v: Value = serde_json::from_str(summary).unwrap();
    let d = &v["stationary_add"];
    assert!((d["value"].as_f64().unwrap() - 1.0 / 3.0).abs() <= 4.0 * d["std_err"].as_f64().unwrap());
    assert!(csv.lines().any(|l| l.starts_with("sr(A=1.4),residual_time,1,")));
}

#[test]
fn verify_quick_passes_and_is_deterministic() {
    let a = quickdetect(&["verify", "--profile", "quick", "--seed", "17", "--threads", "1"]);
    let b = quickdetect(&["verify", "--profile", "quick", "--seed", "17", "--threads", "4"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["passed"], true, "{line}");
    }
}
