use fhn_meso::config::RunConfig;
use fhn_meso::harness::{emit_report, execute, Mode};

fn small() -> RunConfig {
    RunConfig::from_json(
        r#"{"grids": {"nx": 4, "rescaled": {"nv": 64, "lv": 8.0, "nw": 32, "lw": 4.5}},
            "experiment": {"sample_count": 16, "cross_check": null}}"#,
    )
    .unwrap()
}

#[test]
fn sweep_is_independent_of_the_thread_count() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| execute(small(), Mode::Sweep, false)).unwrap();
    let b = four.install(|| execute(small(), Mode::Sweep, false)).unwrap();
    assert!(a.all_passed(), "{:#?}", a.assessment.assertions.iter().filter(|x| !x.passed).collect::<Vec<_>>());

    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (emit_report(da.path(), &a).unwrap(), emit_report(db.path(), &b).unwrap());
    for f in ["summary.json", "sweep.csv", "diagnostics.csv"] {
        assert_eq!(std::fs::read(ra.join(f)).unwrap(), std::fs::read(rb.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn every_sweep_group_is_assessed() {
    let ev = execute(small(), Mode::Sweep, true).unwrap();
    for g in 2..=6u8 {
        assert!(ev.assessment.assertions.iter().any(|a| a.group == g), "group {g}");
    }
    assert!(ev.assessment.assertions.iter().any(|a| a.name == "strict_no_clamping"));
    assert_eq!(ev.runs.len(), 4);
    assert!(ev.runs.iter().all(|r| r.completed()));
}
