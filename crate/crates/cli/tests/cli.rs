use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fhn_meso::config::documented_defaults;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fhn-meso"));
    c.env_remove("FHN_MESO_THREADS").env("RUST_LOG", "error");
    c
}

/// A sweep that takes a couple of seconds: coarse grid, four nodes, default ε list.
fn small_config(dir: &Path, extra_experiment: &str) -> PathBuf {
    let text = format!(
        r#"{{"grids": {{"nx": 4, "rescaled": {{"nv": 64, "lv": 8.0, "nw": 32, "lw": 4.5}}}},
 "experiment": {{"sample_count": 16, "cross_check": null{extra_experiment}}},
 "output": {{"dir": "{}"}}}}"#,
        dir.join("runs").display()
    );
    let path = dir.join("small.json");
    fs::write(&path, text).unwrap();
    path
}

fn only_run_dir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn assertion<'a>(s: &'a serde_json::Value, name: &str) -> &'a serde_json::Value {
    s["assertions"].as_array().unwrap().iter().find(|a| a["name"] == name).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_lists_every_config_key() {
    let o = bin().arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for line in documented_defaults().lines() {
        assert!(text.contains(line), "missing from help: {line}");
    }
    assert!(text.contains("experiment.eps_list = [0.1,0.05,0.025,0.0125]"));
}

#[test]
fn config_errors_exit_2_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"solver": {"dt_max": "fast"}}"#).unwrap();
    let o = bin().args(["sweep", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("solver.dt_max"));

    fs::write(&bad, r#"{"weights": {"kappa": 0.4}}"#).unwrap();
    let o = bin().args(["sweep", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("weights.kappa") && err.contains("0.5"), "{err}");

    let o = bin().args(["simulate", dir.path().join("missing.json").to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_writes_reports_and_leaves_the_config_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let before = fs::read(&cfg).unwrap();
    let o = bin().args(["sweep", cfg.to_str().unwrap(), "--threads", "2"]).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(fs::read(&cfg).unwrap(), before);
    let run = only_run_dir(&dir.path().join("runs"));
    for f in ["summary.json", "sweep.csv", "diagnostics.csv", "config.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let s = summary(&run);
    assert_eq!(s["status"], "ok");
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["runs"].as_array().unwrap().len(), 4);
    let header = fs::read_to_string(run.join("sweep.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "run_id,eps,t,metric,value,flag");

    // the echoed effective config reproduces the same run id
    let o = bin().args(["sweep", run.join("config.json").to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(only_run_dir(&dir.path().join("runs")), run);
}

#[test]
fn reruns_are_byte_identical_and_seed_stamped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bin().args(["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).output().unwrap();
        assert_eq!(code(&o), 0);
    }
    let (ra, rb) = (only_run_dir(&a), only_run_dir(&b));
    assert_eq!(ra.file_name(), rb.file_name());
    for f in ["sweep.csv", "diagnostics.csv", "summary.json"] {
        assert_eq!(fs::read(ra.join(f)).unwrap(), fs::read(rb.join(f)).unwrap(), "{f}");
    }
    let o = bin().args(["simulate", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--seed", "9"]).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_dir(&a).unwrap().count(), 2);
}

#[test]
fn report_recomputes_fits_from_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = bin().args(["sweep", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 0);
    let run = only_run_dir(&dir.path().join("runs"));
    let o = bin().args(["report", run.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 mismatches"));

    let path = run.join("summary.json");
    let text = fs::read_to_string(&path).unwrap();
    let mut s: serde_json::Value = serde_json::from_str(&text).unwrap();
    s["fits"][0]["fit"]["slope"] = serde_json::json!(9.0);
    fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
    let o = bin().args(["report", run.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 1);

    let o = bin().args(["report", dir.path().join("nowhere").to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_bound_tolerance_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let loose = small_config(dir.path(), "");
    let o = bin().args(["sweep", loose.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 0);
    let s = summary(&only_run_dir(&dir.path().join("runs")));
    assert_eq!(assertion(&s, "macro_error_envelope")["passed"], true);

    let strict_dir = tempfile::tempdir().unwrap();
    let tight = small_config(strict_dir.path(), r#", "bound_tolerance": 0.0"#);
    let o = bin().args(["validate", tight.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 1);
    let run = only_run_dir(&strict_dir.path().join("runs"));
    let s = summary(&run);
    assert_eq!(s["status"], "failed");
    assert_eq!(assertion(&s, "macro_error_envelope")["passed"], false);
    assert!(run.join("sweep.csv").is_file());
}
