//! Full validation on the shipped default config, one line per acceptance criterion.
//! Takes several minutes of CPU on release-level optimisation.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;

const CRITERIA: [(u8, &str); 7] = [
    (1, "structural identities and conservation"),
    (2, "O(sqrt eps) convergence of the kinetic solution"),
    (3, "O(eps sqrt|ln eps|) convergence of the marginal"),
    (4, "uniform-in-eps error and moment envelopes"),
    (5, "functional inequalities and relative-entropy monitor"),
    (6, "equicontinuity in w"),
    (7, "quadrature oracles and direct-solver agreement"),
];

#[test]
fn acceptance_criteria() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let config = root.join("configs/default.json");
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fhn-meso"))
        .args(["validate", config.to_str().unwrap(), "--out", out.path().to_str().unwrap()])
        .env_remove("FHN_MESO_THREADS")
        .output()
        .unwrap();
    let code = o.status.code().unwrap();
    assert!(code == 0 || code == 1, "validate exited {code}: {}", String::from_utf8_lossy(&o.stderr));

    let run = std::fs::read_dir(out.path()).unwrap().next().unwrap().unwrap().path();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    let assertions = summary["assertions"].as_array().unwrap();

    let mut failed = Vec::new();
    for (group, title) in CRITERIA {
        let mine: Vec<&serde_json::Value> = assertions.iter().filter(|a| a["group"] == group).collect();
        let ok = !mine.is_empty() && mine.iter().all(|a| a["passed"] == true);
        let values: Vec<String> = mine
            .iter()
            .map(|a| {
                let mark = if a["passed"] == true { "" } else { "!" };
                format!("{mark}{}={}", a["name"].as_str().unwrap(), a["measured"])
            })
            .collect();
        // bypasses libtest output capture
        let line = format!("criterion {group} {}: {title} [{}]\n", if ok { "PASS" } else { "FAIL" }, values.join(", "));
        std::io::stdout().write_all(line.as_bytes()).unwrap();
        if !ok {
            failed.push(group);
        }
    }
    assert_eq!(code, 0, "validate reported assertion failures");
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
