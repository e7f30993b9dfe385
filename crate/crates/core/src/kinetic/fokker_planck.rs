//! Implicit Chang–Cooper (Scharfetter–Gummel) step for ∂t f = ∂v[c f + D ∂v f].
//!
//! Face flux F_{j+½} = (D/dv)[B(−z) f_{j+1} − B(z) f_j] with B(z) = z/(eᶻ − 1) and
//! z = c_{j+½} dv / D. The sampled Gaussian with ratio f_{j+1}/f_j = e^{−z} carries zero flux.

use rayon::prelude::*;

use super::tridiag::TridiagonalLu;
use crate::error::{domain, shape, Result};
use crate::phase_space::{Axis, DensityField};

/// B(z) = z / (eᶻ − 1), with its series near zero.
#[inline]
pub fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        1.0 - 0.5 * z + z * z / 12.0
    } else {
        z / z.exp_m1()
    }
}

/// Backward-Euler matrix (I − τ A) for the no-flux Chang–Cooper operator A,
/// with `z` the face Péclet numbers and `r` = τ·D/dv².
pub fn chang_cooper_factor(z: &[f64], r: f64) -> Result<TridiagonalLu> {
    let n = z.len() + 1;
    let mut lower = vec![0.0; n];
    let mut diag = vec![1.0; n];
    let mut upper = vec![0.0; n];
    for (j, &zj) in z.iter().enumerate() {
        let (bp, bm) = (bernoulli(zj), bernoulli(-zj));
        // flux through face j+½ couples rows j and j+1
        diag[j] += r * bp;
        upper[j] = -r * bm;
        diag[j + 1] += r * bm;
        lower[j + 1] = -r * bp;
    }
    TridiagonalLu::factor(&lower, &diag, &upper)
}

/// Face Péclet numbers for the drift c(v) = ρ (v − center) with unit diffusion scaled out.
pub fn relaxation_peclet(axis: &Axis, rho: f64, center: f64) -> Vec<f64> {
    let dv = axis.spacing();
    (0..axis.len() - 1).map(|j| rho * (axis.face(j) - center) * dv).collect()
}

/// One implicit step of ∂t ν = P ∂v[ρ₀ v ν + ∂v ν] per node, with P = `prefactor[x]`.
///
/// Works on every (x, w) line at once; mass is conserved by the flux form and the
/// renormalized sampled Maxwellian M_{ρ₀} is a fixed point.
pub fn fokker_planck_step(
    nu: &DensityField,
    dt: f64,
    prefactor: &[f64],
    rho0: &[f64],
) -> Result<DensityField> {
    let mut out = nu.clone();
    fokker_planck_in_place(&mut out, dt, prefactor, rho0, &vec![0.0; nu.nx()])?;
    Ok(out)
}

/// In-place version with a per-node centre: ∂t f = P ∂v[ρ (v − c) f + ∂v f].
pub fn fokker_planck_in_place(
    field: &mut DensityField,
    dt: f64,
    prefactor: &[f64],
    rho: &[f64],
    center: &[f64],
) -> Result<()> {
    let nx = field.nx();
    if prefactor.len() != nx || rho.len() != nx || center.len() != nx {
        return Err(shape("per-node coefficient vectors must have nx entries"));
    }
    if !(dt > 0.0) || prefactor.iter().any(|p| !(*p > 0.0)) {
        return Err(domain("Fokker-Planck step needs dt > 0 and positive prefactors"));
    }
    let grid = *field.grid();
    let (nw, dv) = (grid.nw(), grid.dv());
    let factors: Vec<TridiagonalLu> = (0..nx)
        .map(|ix| {
            let z = relaxation_peclet(&grid.v, rho[ix], center[ix]);
            chang_cooper_factor(&z, dt * prefactor[ix] / (dv * dv))
        })
        .collect::<Result<_>>()?;
    field
        .values_mut()
        .par_chunks_mut(grid.slice_len())
        .zip(factors.par_iter())
        .for_each(|(s, lu)| lu.solve_rows(s, nw));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{maxwellian, PhaseGrid};

    #[test]
    fn bernoulli_identities() {
        for z in [-30.0, -2.0, -1e-7, 0.0, 1e-9, 0.5, 40.0] {
            assert!((bernoulli(-z) - bernoulli(z) - z).abs() < 1e-12 * (1.0 + z.abs()));
        }
        assert_eq!(bernoulli(0.0), 1.0);
        assert!(bernoulli(800.0) >= 0.0);
    }

    #[test]
    fn maxwellian_product_is_fixed() {
        let g = PhaseGrid::new(256, 8.0, 16, 3.0).unwrap();
        let rho = [0.7, 1.0, 1.4];
        let vp: Vec<Vec<f64>> = rho.iter().map(|r| maxwellian(&g.v, *r).unwrap().values).collect();
        let wp: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..16).map(|k| 1.0 + 0.1 * ((k + i) as f64).sin()).collect())
            .collect();
        let mut f = DensityField::product(g, &vp, &wp, 0.0).unwrap();
        f.renormalize();
        let out = fokker_planck_step(&f, 0.01, &[50.0, 80.0, 3.0], &rho).unwrap();
        let worst = out.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-13, "{worst}");
    }

    #[test]
    fn conserves_mass_and_positivity() {
        let g = PhaseGrid::new(64, 5.0, 8, 2.0).unwrap();
        let vals: Vec<f64> = (0..64 * 8).map(|i| if i % 37 < 3 { 1.0 } else { 0.0 }).collect();
        let mut f = DensityField::from_values(g, 1, vals, 0.0).unwrap();
        f.renormalize();
        let out = fokker_planck_step(&f, 0.3, &[10.0], &[1.0]).unwrap();
        assert!((out.mass(0) - 1.0).abs() < 1e-13);
        assert!(out.min_value() >= 0.0);
    }

    #[test]
    fn relaxes_to_maxwellian() {
        let g = PhaseGrid::new(128, 8.0, 4, 1.0).unwrap();
        let rho = 1.3;
        let vals: Vec<f64> = (0..128 * 4)
            .map(|i| {
                let v = g.v.node(i / 4);
                (-(v - 2.0).powi(2)).exp() + 0.3 * (-(v + 1.0).powi(2) * 4.0).exp()
            })
            .collect();
        let mut f = DensityField::from_values(g, 1, vals, 0.0).unwrap();
        f.renormalize();
        let steps = 500;
        let dt = 50.0 / rho / steps as f64;
        for _ in 0..steps {
            f = fokker_planck_step(&f, dt, &[1.0], &[rho]).unwrap();
        }
        let m = maxwellian(&g.v, rho).unwrap().values;
        let vm = f.v_marginal(0);
        let l1: f64 = vm.iter().zip(&m).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.dv();
        assert!(l1 < 1e-8, "{l1}");
    }
}
