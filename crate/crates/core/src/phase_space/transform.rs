//! Moving between the original frame μ and the concentrated frame ν.
//!
//! ν(x, v, w) = θ μ(x, V + θ v, w + W), and back.

use log::warn;
use serde::{Deserialize, Serialize};

use super::field::{shifted_maxwellian, DensityField, MacroFields};
use super::grid::PhaseGrid;
use super::interp::{linear, Pchip};
use super::theta::ThetaField;
use crate::error::{shape, Result};

/// What a resampling cost: mass that fell outside the target box and clamped entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformTelemetry {
    pub mass_lost: Vec<f64>,
    pub clamped: usize,
}

impl TransformTelemetry {
    pub fn max_mass_lost(&self) -> f64 {
        self.mass_lost.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

/// out(v, w) = scale · src(v_offset + v_factor·v, w_offset + w), cubic in v, linear in w.
fn resample_slice(
    src: &[f64],
    src_grid: &PhaseGrid,
    dst_grid: &PhaseGrid,
    v_offset: f64,
    v_factor: f64,
    w_offset: f64,
    scale: f64,
) -> Vec<f64> {
    let (nvs, nws) = (src_grid.nv(), src_grid.nw());
    let (nvt, nwt) = (dst_grid.nv(), dst_grid.nw());
    // linear in w first, onto shifted target columns, stored column-major
    let mut cols = vec![0.0; nwt * nvs];
    for j in 0..nvs {
        let row = &src[j * nws..(j + 1) * nws];
        for k in 0..nwt {
            cols[k * nvs + j] = linear(&src_grid.w, row, dst_grid.w.node(k) + w_offset);
        }
    }
    let mut out = vec![0.0; nvt * nwt];
    for k in 0..nwt {
        let col = &cols[k * nvs..(k + 1) * nvs];
        if col.iter().all(|&x| x == 0.0) {
            continue;
        }
        let p = Pchip::new(src_grid.v, col);
        for j in 0..nvt {
            out[j * nwt + k] = scale * p.eval(v_offset + v_factor * dst_grid.v.node(j));
        }
    }
    out
}

fn finish(field: &mut DensityField) -> TransformTelemetry {
    let clamped = field.clamp_negative();
    let mass_lost: Vec<f64> = field.masses().iter().map(|m| 1.0 - m).collect();
    field.renormalize();
    let t = TransformTelemetry { mass_lost, clamped };
    if t.max_mass_lost() > 1e-12 {
        warn!("change of variables truncated: max mass defect {:.3e}", t.max_mass_lost());
    }
    t
}

fn check_shapes(f: &DensityField, m: &MacroFields, th: &ThetaField) -> Result<()> {
    if m.len() != f.nx() || th.values.len() != f.nx() {
        return Err(shape("field, macro fields and theta disagree on nx"));
    }
    Ok(())
}

/// ν(x, v, w) = θ μ(x, V + θv, w + W) on `target`, clamped and renormalized.
pub fn blow_up(
    mu: &DensityField,
    frame: &MacroFields,
    theta: &ThetaField,
    target: PhaseGrid,
) -> Result<(DensityField, TransformTelemetry)> {
    check_shapes(mu, frame, theta)?;
    let mut out = DensityField::zeros(target, mu.nx(), mu.time());
    for ix in 0..mu.nx() {
        let th = theta.values[ix];
        let s = resample_slice(
            mu.slice(ix),
            mu.grid(),
            &target,
            frame.voltage[ix],
            th,
            frame.adaptation[ix],
            th,
        );
        out.slice_mut(ix).copy_from_slice(&s);
    }
    let tel = finish(&mut out);
    Ok((out, tel))
}

/// Inverse of [`blow_up`]: μ(x, v, w) = θ^{-1} ν(x, (v − V)/θ, w − W).
pub fn press_down(
    nu: &DensityField,
    frame: &MacroFields,
    theta: &ThetaField,
    target: PhaseGrid,
) -> Result<(DensityField, TransformTelemetry)> {
    check_shapes(nu, frame, theta)?;
    let mut out = DensityField::zeros(target, nu.nx(), nu.time());
    for ix in 0..nu.nx() {
        let th = theta.values[ix];
        let s = resample_slice(
            nu.slice(ix),
            nu.grid(),
            &target,
            -frame.voltage[ix] / th,
            1.0 / th,
            -frame.adaptation[ix],
            1.0 / th,
        );
        out.slice_mut(ix).copy_from_slice(&s);
    }
    let tel = finish(&mut out);
    Ok((out, tel))
}

/// M_{ρθ⁻²}(v − V) ⊗ μ̄(w) per node: the concentrated comparison profile.
pub fn compose_asymptotic_profile(
    voltage: &[f64],
    bar_mu: &[Vec<f64>],
    theta: &[f64],
    rho0: &[f64],
    grid: PhaseGrid,
    time: f64,
) -> Result<DensityField> {
    let nx = voltage.len();
    if bar_mu.len() != nx || theta.len() != nx || rho0.len() != nx {
        return Err(shape("profile inputs disagree on nx"));
    }
    let mut vp = Vec::with_capacity(nx);
    for ix in 0..nx {
        let rho = rho0[ix] / (theta[ix] * theta[ix]);
        vp.push(shifted_maxwellian(&grid.v, rho, voltage[ix])?.values);
    }
    DensityField::product(grid, &vp, bar_mu, time)
}
