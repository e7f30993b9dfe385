//! Density dumps: one JSON header line, then little-endian f64 values in (x, v, w) order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::field::DensityField;
use super::grid::PhaseGrid;
use crate::error::{shape, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub nx: usize,
    pub nv: usize,
    pub nw: usize,
    #[serde(rename = "Lv")]
    pub lv: f64,
    #[serde(rename = "Lw")]
    pub lw: f64,
    pub t: f64,
    pub eps: f64,
}

pub fn write_dump(path: &Path, field: &DensityField, eps: f64) -> Result<()> {
    let g = field.grid();
    let header = DumpHeader {
        nx: field.nx(),
        nv: g.nv(),
        nw: g.nw(),
        lv: g.v.half_width(),
        lw: g.w.half_width(),
        t: field.time(),
        eps,
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for x in field.values() {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<(DumpHeader, DensityField)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: DumpHeader = serde_json::from_str(line.trim_end())?;
    let grid = PhaseGrid::new(h.nv, h.lv, h.nw, h.lw)?;
    let n = h.nx * grid.slice_len();
    let mut bytes = Vec::with_capacity(n * 8);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(shape(format!("dump holds {} bytes, header implies {}", bytes.len(), n * 8)));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let field = DensityField::from_values(grid, h.nx, values, h.t)?;
    Ok((h, field))
}
