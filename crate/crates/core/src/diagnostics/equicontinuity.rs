//! L¹ modulus of continuity of a density under w-translations.

use serde::{Deserialize, Serialize};

use super::shear::shear_transform;
use crate::error::{domain, Result};
use crate::phase_space::field::l1;
use crate::phase_space::{DensityField, PhaseGrid};

/// (τ_s f)(v, w) = f(v, w − s·dw), zero where the source leaves the box.
pub fn translate_w(grid: &PhaseGrid, slice: &[f64], cells: isize) -> Vec<f64> {
    let nw = grid.nw() as isize;
    let mut out = vec![0.0; slice.len()];
    for (row_out, row_in) in out.chunks_mut(grid.nw()).zip(slice.chunks(grid.nw())) {
        for k in 0..nw {
            let src = k - cells;
            if (0..nw).contains(&src) {
                row_out[k as usize] = row_in[src as usize];
            }
        }
    }
    out
}

fn shift_in_cells(grid: &PhaseGrid, w0: f64) -> Result<isize> {
    let c = w0 / grid.dw();
    let r = c.round();
    if (c - r).abs() > 1e-9 * (1.0 + c.abs()) {
        return Err(domain(format!("shift {w0} is not a multiple of dw = {}", grid.dw())));
    }
    Ok(r as isize)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    pub ix: usize,
    pub w0: f64,
    pub value: f64,
}

/// ‖ν − τ_{w₀}ν‖₁ per node and shift; every shift must be a multiple of dw.
pub fn equicontinuity_modulus(nu: &DensityField, shifts: &[f64]) -> Result<Vec<ModulusRow>> {
    let g = *nu.grid();
    let cells: Vec<isize> = shifts.iter().map(|&s| shift_in_cells(&g, s)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(nu.nx() * shifts.len());
    for ix in 0..nu.nx() {
        let s = nu.slice(ix);
        for (&w0, &c) in shifts.iter().zip(&cells) {
            out.push(ModulusRow { ix, w0, value: l1(&g, s, &translate_w(&g, s, c)) });
        }
    }
    Ok(out)
}

/// C(|s| + |s|^½) with C = √(max(8 m₁, 1/b)) and s = e^{bt}w₀.
pub fn equicontinuity_bound(m1: f64, b: f64, scaled_shift: f64) -> f64 {
    let c = (8.0 * m1).max(1.0 / b).sqrt();
    let s = scaled_shift.abs();
    c * (s + s.sqrt())
}

/// m₁ = sup_γ ‖ν₀ − τ_{γv}ν₀‖₁/|γ| + sup_{w₀} ‖ν₀ − τ_{w₀}ν₀‖₁/|w₀| over the given
/// shear rates and w-shifts (grid multiples), worst node.
pub fn initial_lipschitz_m1(nu0: &DensityField, gammas: &[f64], shifts: &[f64]) -> Result<f64> {
    let g = *nu0.grid();
    let mut worst = 0.0_f64;
    for ix in 0..nu0.nx() {
        let single = DensityField::from_values(g, 1, nu0.slice(ix).to_vec(), nu0.time())?;
        let mut shear_sup = 0.0_f64;
        for &gm in gammas.iter().filter(|g| **g != 0.0) {
            let (s, _) = shear_transform(&single, &[gm])?;
            shear_sup = shear_sup.max(single.l1_distance(&s, 0) / gm.abs());
        }
        let mut shift_sup = 0.0_f64;
        for row in equicontinuity_modulus(&single, shifts)? {
            if row.w0 != 0.0 {
                shift_sup = shift_sup.max(row.value / row.w0.abs());
            }
        }
        worst = worst.max(shear_sup + shift_sup);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(g: &PhaseGrid) -> DensityField {
        let mut f = DensityField::zeros(*g, 1, 0.0);
        for j in 0..g.nv() {
            for k in 0..g.nw() {
                let (v, w) = (g.v.node(j), g.w.node(k));
                f.values_mut()[g.index(j, k)] = (-0.5 * v * v - 2.0 * w * w).exp();
            }
        }
        f.renormalize();
        f
    }

    #[test]
    fn zero_shift_and_isometry() {
        let g = PhaseGrid::new(32, 6.0, 101, 5.0).unwrap();
        let f = gaussian(&g);
        let rows = equicontinuity_modulus(&f, &[0.0]).unwrap();
        assert_eq!(rows[0].value, 0.0);
        let t = translate_w(&g, f.slice(0), 7);
        let m: f64 = t.iter().sum::<f64>() * g.cell_area();
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn off_grid_shift_rejected() {
        let g = PhaseGrid::new(8, 1.0, 11, 1.0).unwrap();
        let f = DensityField::zeros(g, 1, 0.0);
        assert!(equicontinuity_modulus(&f, &[0.3 * g.dw()]).is_err());
    }

    #[test]
    fn small_shift_matches_derivative_norm() {
        let g = PhaseGrid::new(32, 6.0, 801, 5.0).unwrap();
        let f = gaussian(&g);
        let w0 = 4.0 * g.dw();
        let got = equicontinuity_modulus(&f, &[w0]).unwrap()[0].value;
        // ‖∂w p‖₁ for p ∝ e^{−2w²} is 2 p(0) = 2√(2/π)
        let want = w0 * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((got - want).abs() / want < 0.1, "{got} {want}");
    }

    #[test]
    fn bound_formula() {
        assert!((equicontinuity_bound(0.1, 1.0, 4.0) - 6.0).abs() < 1e-12);
        assert!((equicontinuity_bound(1.0, 1.0, 1.0) - 2.0 * 8f64.sqrt()).abs() < 1e-12);
    }
}
