//! Run-stamped output directories: summary JSON, metric CSV, diagnostics CSV, config echo
//! and the cross-check snapshot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::assess::{unflagged_sup, Assertion, FitOutcome};
use super::fit::{fit_rate, Abscissa};
use super::run::{RunStatus, RunTelemetry, SuiteTally};
use super::{Evaluation, Mode};
use crate::config::RunConfig;
use crate::diagnostics::TwinMonitor;
use crate::error::{Error, Result};
use crate::kinetic::{write_checkpoint, CheckpointSidecar};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const SWEEP_HEADER: [&str; 6] = ["run_id", "eps", "t", "metric", "value", "flag"];
pub const DIAGNOSTICS_HEADER: [&str; 7] = ["run_id", "eps", "t", "x", "functional_name", "value", "flags"];

/// Hex SHA-256 of the effective config echo followed by the seed. The output directory is
/// blanked first so the same run written elsewhere keeps its id.
pub fn run_id(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.output.dir.clear();
    let mut h = Sha256::new();
    h.update(c.echo().as_bytes());
    h.update(config.experiment.seed.to_le_bytes());
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub eps: f64,
    pub status: RunStatus,
    pub telemetry: RunTelemetry,
    pub m1: f64,
    pub twin: Option<TwinMonitor>,
    pub suites: BTreeMap<String, SuiteTally>,
    /// sup over sample times per metric, flagged samples excluded.
    pub sups: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GroupCount {
    pub passed: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub run_id: String,
    pub mode: Mode,
    /// "ok", "failed" or "empty".
    pub status: String,
    pub passed: usize,
    pub failed: usize,
    pub groups: BTreeMap<u8, GroupCount>,
    pub runs: Vec<RunSummary>,
    pub fits: Vec<FitOutcome>,
    pub assertions: Vec<Assertion>,
}

impl Summary {
    pub fn from_evaluation(ev: &Evaluation) -> Self {
        let runs: Vec<RunSummary> = ev
            .runs
            .iter()
            .map(|r| {
                let mut names: Vec<&str> = r.samples.iter().flat_map(|s| s.metrics.iter().map(|(n, _)| n.as_str())).collect();
                names.sort_unstable();
                names.dedup();
                RunSummary {
                    eps: r.eps,
                    status: r.status.clone(),
                    telemetry: r.telemetry.clone(),
                    m1: r.m1,
                    twin: r.twin.clone(),
                    suites: r.suites.clone(),
                    sups: names.into_iter().filter_map(|n| unflagged_sup(r, n).map(|v| (n.to_string(), v))).collect(),
                }
            })
            .collect();
        let a = &ev.assessment.assertions;
        let mut groups: BTreeMap<u8, GroupCount> = BTreeMap::new();
        for x in a {
            let g = groups.entry(x.group).or_default();
            if x.passed {
                g.passed += 1;
            } else {
                g.failed += 1;
            }
        }
        let failed = a.iter().filter(|x| !x.passed).count();
        let status = if runs.is_empty() {
            "empty"
        } else if failed == 0 {
            "ok"
        } else {
            "failed"
        };
        Summary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            run_id: run_id(&ev.config),
            mode: ev.mode,
            status: status.into(),
            passed: a.len() - failed,
            failed,
            groups,
            runs,
            fits: ev.assessment.fits.clone(),
            assertions: a.clone(),
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Writes `<root>/<run_id>/` and returns that directory. Reruns of the same config and
/// seed overwrite it with identical bytes.
pub fn emit_report(root: &Path, ev: &Evaluation) -> Result<PathBuf> {
    let summary = Summary::from_evaluation(ev);
    let dir = root.join(&summary.run_id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), ev.config.echo())?;

    let mut w = csv_writer(&dir.join("sweep.csv"))?;
    w.write_record(SWEEP_HEADER)?;
    for r in &ev.runs {
        for s in &r.samples {
            for (name, v) in &s.metrics {
                let flag = if s.flagged.iter().any(|f| f == name) { "diverged" } else { "" };
                w.write_record([summary.run_id.as_str(), &r.eps.to_string(), &s.t.to_string(), name, &v.to_string(), flag])?;
            }
        }
    }
    w.flush()?;

    if ev.config.output.diagnostics_csv {
        let mut w = csv_writer(&dir.join("diagnostics.csv"))?;
        w.write_record(DIAGNOSTICS_HEADER)?;
        for r in &ev.runs {
            for n in &r.nodes {
                w.write_record([
                    summary.run_id.as_str(),
                    &r.eps.to_string(),
                    &n.t.to_string(),
                    &n.x.to_string(),
                    &n.name,
                    &n.value.to_string(),
                    &n.flag,
                ])?;
            }
        }
        w.flush()?;
    }

    for r in &ev.runs {
        if let Some(s) = &r.snapshot {
            let side = CheckpointSidecar {
                t: s.nu.time(),
                voltage: s.voltage.clone(),
                adaptation: s.adaptation.clone(),
                theta: s.theta.clone(),
                mass_defect: s.mass_defect,
                clamped: s.clamped,
            };
            write_checkpoint(&dir.join("checkpoint"), &format!("eps_{}", s.eps), &s.nu, s.eps, &side)?;
        }
    }

    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(dir.join("summary.json"), text)?;
    Ok(dir)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Recomputation {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Rebuilds every fit in `<dir>/summary.json` from the rows of `<dir>/sweep.csv` alone.
pub fn recompute_fits(dir: &Path) -> Result<Recomputation> {
    let text = fs::read_to_string(dir.join("summary.json"))?;
    let summary: serde_json::Value = serde_json::from_str(&text)?;
    let bad = |what: &str| Error::Config { path: dir.join("summary.json").display().to_string(), message: what.to_string() };
    if summary["schema_version"].as_u64() != Some(SUMMARY_SCHEMA_VERSION as u64) {
        return Err(bad("unsupported or missing schema_version"));
    }
    let failed_eps: Vec<f64> = summary["runs"]
        .as_array()
        .ok_or_else(|| bad("runs must be an array"))?
        .iter()
        .filter(|r| r["status"]["state"] != "completed")
        .filter_map(|r| r["eps"].as_f64())
        .collect();

    // (metric, eps) → sup of unflagged values, eps kept in file order
    let mut sups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut rd = csv::Reader::from_path(dir.join("sweep.csv"))?;
    for row in rd.records() {
        let row = row?;
        let parse = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| bad(&format!("sweep.csv column {i}: {e}")))
        };
        if !row[5].is_empty() {
            continue;
        }
        let (eps, value) = (parse(1)?, parse(4)?);
        if failed_eps.contains(&eps) {
            continue;
        }
        let series = sups.entry(row[3].to_string()).or_default();
        match series.iter_mut().find(|(e, _)| *e == eps) {
            Some(slot) => slot.1 = slot.1.max(value),
            None => series.push((eps, value)),
        }
    }

    let mut out = Recomputation::default();
    for f in summary["fits"].as_array().ok_or_else(|| bad("fits must be an array"))? {
        let name = f["metric"].as_str().ok_or_else(|| bad("fit without metric"))?;
        if f["fit"].is_null() {
            continue;
        }
        let abscissa: Abscissa = serde_json::from_value(f["fit"]["abscissa"].clone())?;
        out.checked += 1;
        let points = sups.get(name).cloned().unwrap_or_default();
        match fit_rate(&points, abscissa) {
            Ok(g) => {
                for (key, mine) in [("slope", g.slope), ("intercept", g.intercept), ("r_squared", g.r_squared)] {
                    let theirs = f["fit"][key].as_f64().unwrap_or(f64::NAN);
                    if !close(mine, theirs) {
                        out.mismatches.push(format!("{name}.{key}: summary {theirs}, recomputed {mine}"));
                    }
                }
            }
            Err(e) => out.mismatches.push(format!("{name}: summary has a fit, recomputation refused: {e}")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::{EpsRun, SampleRecord};
    use crate::harness::{assess_sweep, Assessment};

    fn synthetic(eps_list: &[f64]) -> Evaluation {
        let runs: Vec<EpsRun> = eps_list
            .iter()
            .map(|&e| EpsRun {
                eps: e,
                status: RunStatus::Completed,
                samples: (0..4)
                    .map(|i| {
                        let t = i as f64 * 0.5;
                        SampleRecord {
                            t,
                            metrics: vec![
                                ("l1_integrated_scaled".into(), t * e.sqrt() * (1.0 + 0.01 * e.ln())),
                                ("perp_h0".into(), if i == 3 { 1e9 } else { e.sqrt() / (1.0 + t) }),
                            ],
                            flagged: if i == 3 { vec!["perp_h0".into()] } else { vec![] },
                        }
                    })
                    .collect(),
                nodes: vec![],
                suites: BTreeMap::new(),
                telemetry: RunTelemetry::default(),
                m1: 1.0,
                twin: None,
                snapshot: None,
            })
            .collect();
        let config = RunConfig::default();
        let assessment = if runs.is_empty() { Assessment::default() } else { assess_sweep(&config, &runs) };
        Evaluation { mode: Mode::Sweep, config, runs, assessment }
    }

    #[test]
    fn run_id_is_hex_and_seed_dependent() {
        let mut c = RunConfig::default();
        let a = run_id(&c);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|ch| ch.is_ascii_hexdigit()));
        c.experiment.seed = 7;
        assert_ne!(a, run_id(&c));
    }

    #[test]
    fn empty_sweep_is_explicit() {
        let ev = synthetic(&[]);
        let dir = tempfile::tempdir().unwrap();
        let out = emit_report(dir.path(), &ev).unwrap();
        let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(s["status"], "empty");
        assert_eq!(s["runs"].as_array().unwrap().len(), 0);
        let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let ev = synthetic(&[0.1, 0.05, 0.025]);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let da = emit_report(a.path(), &ev).unwrap();
        let db = emit_report(b.path(), &ev).unwrap();
        for f in ["sweep.csv", "summary.json", "config.json"] {
            assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn fits_recompute_from_csv() {
        let ev = synthetic(&[0.1, 0.05, 0.025, 0.0125]);
        let dir = tempfile::tempdir().unwrap();
        let out = emit_report(dir.path(), &ev).unwrap();
        let r = recompute_fits(&out).unwrap();
        assert!(r.checked >= 2, "{r:?}");
        assert!(r.mismatches.is_empty(), "{r:?}");
    }

    #[test]
    fn tampered_summary_is_caught() {
        let ev = synthetic(&[0.1, 0.05, 0.025, 0.0125]);
        let dir = tempfile::tempdir().unwrap();
        let out = emit_report(dir.path(), &ev).unwrap();
        let path = out.join("summary.json");
        let mut s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let fits = s["fits"].as_array_mut().unwrap();
        let f = fits.iter_mut().find(|f| !f["fit"].is_null()).unwrap();
        f["fit"]["slope"] = serde_json::json!(0.123);
        fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
        assert!(!recompute_fits(&out).unwrap().mismatches.is_empty());
    }
}
