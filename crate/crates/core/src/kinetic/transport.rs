//! Conservative finite-volume transport ∂t f + ∂v(c_v f) + ∂w(c_w f) = 0 on one
//! (v, w) slice, with no-flux boundaries.
//!
//! `Upwind` is the first-order donor-cell update with forward Euler. `Muscl` uses
//! monotonized-central limited slopes and the two-stage SSP Runge–Kutta method; both
//! keep f ≥ 0 when dt·(max|c_v|/dv + max|c_w|/dw) stays below 1 (upwind) or ½ (MUSCL).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{DensityField, PhaseGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportScheme {
    Upwind,
    Muscl,
}

impl TransportScheme {
    fn courant_limit(self) -> f64 {
        match self {
            TransportScheme::Upwind => 1.0,
            TransportScheme::Muscl => 0.5,
        }
    }
}

/// Velocities on cell faces of one slice.
///
/// `v[j*nw + k]` sits between (v_j, w_k) and (v_{j+1}, w_k);
/// `w[j*(nw-1) + k]` between (v_j, w_k) and (v_j, w_{k+1}).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceDrifts {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl FaceDrifts {
    pub fn from_fn(
        grid: &PhaseGrid,
        drift_v: impl Fn(f64, f64) -> f64,
        drift_w: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let (nv, nw) = (grid.nv(), grid.nw());
        let wn = grid.w.nodes();
        let vn = grid.v.nodes();
        let mut v = Vec::with_capacity((nv - 1) * nw);
        for j in 0..nv - 1 {
            let vf = grid.v.face(j);
            v.extend(wn.iter().map(|&w| drift_v(vf, w)));
        }
        let wf: Vec<f64> = (0..nw - 1).map(|k| grid.w.face(k)).collect();
        let mut w = Vec::with_capacity(nv * (nw - 1));
        for &vj in &vn {
            w.extend(wf.iter().map(|&wk| drift_w(vj, wk)));
        }
        Self { v, w }
    }

    pub fn zeros(grid: &PhaseGrid) -> Self {
        Self {
            v: vec![0.0; (grid.nv() - 1) * grid.nw()],
            w: vec![0.0; grid.nv() * (grid.nw() - 1)],
        }
    }

    pub fn max_speeds(&self) -> (f64, f64) {
        let m = |x: &[f64]| x.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        (m(&self.v), m(&self.w))
    }
}

/// Largest stable dt for the given drifts, scaled by `cfl_safety`.
pub fn admissible_dt(grid: &PhaseGrid, drifts: &FaceDrifts, scheme: TransportScheme, cfl_safety: f64) -> f64 {
    let (cv, cw) = drifts.max_speeds();
    let rate = cv / grid.dv() + cw / grid.dw();
    if rate == 0.0 {
        f64::INFINITY
    } else {
        cfl_safety * scheme.courant_limit() / rate
    }
}

#[inline]
fn mc_slope(l: f64, c: f64, r: f64) -> f64 {
    let (a, b) = (c - l, r - c);
    if a * b <= 0.0 {
        0.0
    } else {
        let m = (2.0 * a.abs()).min(2.0 * b.abs()).min(0.5 * (a + b).abs());
        m.copysign(a)
    }
}

/// Scratch buffers for one slice.
#[derive(Default)]
pub struct TransportWork {
    slope: Vec<f64>,
    rate: Vec<f64>,
    stage: Vec<f64>,
}

fn divergence(f: &[f64], grid: &PhaseGrid, d: &FaceDrifts, scheme: TransportScheme, slope: &mut Vec<f64>, out: &mut [f64]) {
    let (nv, nw) = (grid.nv(), grid.nw());
    let (idv, idw) = (1.0 / grid.dv(), 1.0 / grid.dw());
    let muscl = scheme == TransportScheme::Muscl;
    out.iter_mut().for_each(|x| *x = 0.0);
    slope.resize(f.len(), 0.0);

    // v direction
    if muscl {
        slope[..nw].iter_mut().for_each(|x| *x = 0.0);
        slope[(nv - 1) * nw..].iter_mut().for_each(|x| *x = 0.0);
        for j in 1..nv - 1 {
            for k in 0..nw {
                let i = j * nw + k;
                slope[i] = mc_slope(f[i - nw], f[i], f[i + nw]);
            }
        }
    }
    for j in 0..nv - 1 {
        for k in 0..nw {
            let (il, ir) = (j * nw + k, (j + 1) * nw + k);
            let c = d.v[il];
            let face = if c >= 0.0 {
                if muscl { f[il] + 0.5 * slope[il] } else { f[il] }
            } else if muscl {
                f[ir] - 0.5 * slope[ir]
            } else {
                f[ir]
            };
            let flux = c * face * idv;
            out[il] -= flux;
            out[ir] += flux;
        }
    }

    // w direction
    for j in 0..nv {
        let row = &f[j * nw..(j + 1) * nw];
        let cs = &d.w[j * (nw - 1)..(j + 1) * (nw - 1)];
        let o = &mut out[j * nw..(j + 1) * nw];
        let s = &mut slope[j * nw..(j + 1) * nw];
        if muscl {
            s[0] = 0.0;
            s[nw - 1] = 0.0;
            for k in 1..nw - 1 {
                s[k] = mc_slope(row[k - 1], row[k], row[k + 1]);
            }
        }
        for k in 0..nw - 1 {
            let c = cs[k];
            let face = if c >= 0.0 {
                if muscl { row[k] + 0.5 * s[k] } else { row[k] }
            } else if muscl {
                row[k + 1] - 0.5 * s[k + 1]
            } else {
                row[k + 1]
            };
            let flux = c * face * idw;
            o[k] -= flux;
            o[k + 1] += flux;
        }
    }
}

/// One step of size `dt` on a slice; the caller guarantees the CFL bound.
/// Returns the number of entries clamped from below −1e−14 back to zero.
pub fn advance_slice(
    f: &mut [f64],
    grid: &PhaseGrid,
    drifts: &FaceDrifts,
    dt: f64,
    scheme: TransportScheme,
    work: &mut TransportWork,
) -> usize {
    let n = f.len();
    work.rate.resize(n, 0.0);
    divergence(f, grid, drifts, scheme, &mut work.slope, &mut work.rate);
    match scheme {
        TransportScheme::Upwind => {
            for (x, r) in f.iter_mut().zip(&work.rate) {
                *x += dt * r;
            }
        }
        TransportScheme::Muscl => {
            work.stage.resize(n, 0.0);
            for ((s, x), r) in work.stage.iter_mut().zip(f.iter()).zip(&work.rate) {
                *s = x + dt * r;
            }
            divergence(&work.stage, grid, drifts, scheme, &mut work.slope, &mut work.rate);
            for ((x, s), r) in f.iter_mut().zip(&work.stage).zip(&work.rate) {
                *x = 0.5 * (*x + s + dt * r);
            }
        }
    }
    let mut clamped = 0;
    for x in f.iter_mut() {
        if *x < 0.0 {
            if *x < -1e-14 {
                clamped += 1;
            }
            *x = 0.0;
        }
    }
    clamped
}

/// Advances a slice over `dt` in as many equal sub-steps as the CFL bound needs.
/// Returns (sub-steps, clamped entries).
pub fn advance_slice_subcycled(
    f: &mut [f64],
    grid: &PhaseGrid,
    drifts: &FaceDrifts,
    dt: f64,
    scheme: TransportScheme,
    cfl_safety: f64,
    work: &mut TransportWork,
) -> (usize, usize) {
    let adm = admissible_dt(grid, drifts, scheme, cfl_safety);
    let n = if adm.is_finite() { (dt / adm).ceil().max(1.0) as usize } else { 1 };
    let h = dt / n as f64;
    let mut clamped = 0;
    for _ in 0..n {
        clamped += advance_slice(f, grid, drifts, h, scheme, work);
    }
    (n, clamped)
}

/// Transport of every node over `dt` with drifts `drift_v(x, v, w)`, `drift_w(x, v, w)`.
/// Rejects the step if `dt` exceeds the CFL bound.
pub fn transport_step(
    field: &DensityField,
    drift_v: &(dyn Fn(usize, f64, f64) -> f64 + Sync),
    drift_w: &(dyn Fn(usize, f64, f64) -> f64 + Sync),
    dt: f64,
    scheme: TransportScheme,
    cfl_safety: f64,
) -> Result<DensityField> {
    let grid = *field.grid();
    let drifts: Vec<FaceDrifts> = (0..field.nx())
        .map(|ix| FaceDrifts::from_fn(&grid, |v, w| drift_v(ix, v, w), |v, w| drift_w(ix, v, w)))
        .collect();
    let adm = drifts
        .iter()
        .map(|d| admissible_dt(&grid, d, scheme, cfl_safety))
        .fold(f64::INFINITY, f64::min);
    if dt > adm {
        return Err(Error::Cfl { requested: dt, admissible: adm });
    }
    let mut out = field.clone();
    out.values_mut()
        .par_chunks_mut(grid.slice_len())
        .zip(drifts.par_iter())
        .for_each_init(TransportWork::default, |work, (s, d)| {
            advance_slice(s, &grid, d, dt, scheme, work);
        });
    out.set_time(field.time() + dt);
    Ok(out)
}
