//! Checkpoints: a density dump plus a JSON sidecar with the frame and step telemetry.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::phase_space::{write_dump, DensityField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub t: f64,
    #[serde(rename = "V")]
    pub voltage: Vec<f64>,
    #[serde(rename = "W")]
    pub adaptation: Vec<f64>,
    pub theta: Vec<f64>,
    pub mass_defect: f64,
    pub clamped: usize,
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`; returns both paths.
pub fn write_checkpoint(
    dir: &Path,
    stem: &str,
    field: &DensityField,
    eps: f64,
    sidecar: &CheckpointSidecar,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    write_dump(&bin, field, eps)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(&json)?), sidecar)?;
    Ok((bin, json))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{read_dump, PhaseGrid};

    #[test]
    fn writes_dump_and_sidecar() {
        let g = PhaseGrid::new(4, 1.0, 3, 1.0).unwrap();
        let f = DensityField::from_values(g, 1, vec![0.5; 12], 0.25).unwrap();
        let side = CheckpointSidecar {
            t: 0.25,
            voltage: vec![0.1],
            adaptation: vec![-0.2],
            theta: vec![0.9],
            mass_defect: 0.0,
            clamped: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let (bin, json) = write_checkpoint(dir.path(), "step_0001", &f, 0.1, &side).unwrap();
        let (_, back) = read_dump(&bin).unwrap();
        assert_eq!(back.values(), f.values());
        let text = std::fs::read_to_string(json).unwrap();
        assert!(text.contains("\"V\""));
        let parsed: CheckpointSidecar = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, side);
    }
}
