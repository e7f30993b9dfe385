//! Weighted L² / H^k norms, the projection onto Maxwellian products, the
//! Fokker–Planck dissipation and the Poincaré-type inequalities built on them.

use serde::{Deserialize, Serialize};

use super::weights::{WeightSpec, WeightVariant};
use crate::error::{domain, shape, Result};
use crate::phase_space::field::slice_w_marginal;
use crate::phase_space::{maxwellian, Axis, DensityField, PhaseGrid};

/// ln of the largest weighted square allowed before a norm is declared diverged.
const LN_OVERFLOW: f64 = 690.7755; // ln 1e300

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormValue {
    pub value: f64,
    pub diverged: bool,
}

impl NormValue {
    fn from_sum(sum: f64, diverged: bool) -> Self {
        if diverged {
            Self { value: f64::INFINITY, diverged }
        } else {
            Self { value: sum.sqrt(), diverged }
        }
    }
}

/// Centred w-derivative of order `l` along each v-row (one-sided at the ends).
fn w_derivative(grid: &PhaseGrid, s: &[f64], l: usize) -> Vec<f64> {
    let nw = grid.nw();
    let mut cur = s.to_vec();
    for _ in 0..l {
        cur = cur.chunks(nw).flat_map(|row| derivative_1d(row, grid.dw())).collect();
    }
    cur
}

fn derivative_1d(row: &[f64], h: f64) -> Vec<f64> {
    let n = row.len();
    (0..n)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (row[hi] - row[lo]) / ((hi - lo) as f64 * h)
        })
        .collect()
}

fn weighted_sum(grid: &PhaseGrid, s: &[f64], weight: &WeightSpec, rho: f64) -> (f64, bool) {
    let nw = grid.nw();
    let (mut acc, mut diverged) = (0.0, false);
    for (i, &x) in s.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let lm = weight.ln_eval(rho, grid.v.node(i / nw), grid.w.node(i % nw));
        let l = lm + 2.0 * x.abs().ln();
        if l > LN_OVERFLOW {
            diverged = true;
        }
        acc += l.exp();
    }
    (acc * grid.cell_area(), diverged)
}

/// ‖ν‖_{H^k_w(m)} = (Σ_{l≤k} ∫|∂_w^l ν|² m du)^{½} for k ∈ {0, 1, 2}.
pub fn weighted_norm(grid: &PhaseGrid, slice: &[f64], k: usize, weight: &WeightSpec, rho: f64) -> Result<NormValue> {
    if k > 2 {
        return Err(domain(format!("derivative order {k} must be 0, 1 or 2")));
    }
    if weight.variant.is_marginal() {
        return Err(domain("phase-space norms need a (v, w) weight"));
    }
    let (mut sum, mut div) = (0.0, false);
    for l in 0..=k {
        let (s, d) = weighted_sum(grid, &w_derivative(grid, slice, l), weight, rho);
        sum += s;
        div |= d;
    }
    Ok(NormValue::from_sum(sum, div))
}

/// ‖p‖_{H^k(m̄)} of a w-profile for the marginal weights.
pub fn marginal_weighted_norm(axis: &Axis, profile: &[f64], k: usize, weight: &WeightSpec) -> Result<NormValue> {
    if k > 2 {
        return Err(domain(format!("derivative order {k} must be 0, 1 or 2")));
    }
    if !weight.variant.is_marginal() {
        return Err(domain("marginal norms need a w-only weight"));
    }
    if profile.len() != axis.len() {
        return Err(shape("profile length does not match axis"));
    }
    let (mut sum, mut div) = (0.0, false);
    let mut cur = profile.to_vec();
    for l in 0..=k {
        if l > 0 {
            cur = derivative_1d(&cur, axis.spacing());
        }
        for (i, &x) in cur.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let lw = weight.ln_eval(1.0, 0.0, axis.node(i)) + 2.0 * x.abs().ln();
            div |= lw > LN_OVERFLOW;
            sum += lw.exp() * axis.spacing();
        }
    }
    Ok(NormValue::from_sum(sum, div))
}

/// Πν = M_ρ₀ ⊗ ν̄ and ν⊥ = ν − Πν, node by node.
pub fn projection_pi(nu: &DensityField, rho0: &[f64]) -> Result<(DensityField, DensityField)> {
    if rho0.len() != nu.nx() {
        return Err(shape("rho0 and density disagree on nx"));
    }
    let g = *nu.grid();
    let mut pi = DensityField::zeros(g, nu.nx(), nu.time());
    let mut perp = DensityField::zeros(g, nu.nx(), nu.time());
    for (ix, &rho) in rho0.iter().enumerate() {
        let m = maxwellian(&g.v, rho)?.values;
        let bar = slice_w_marginal(&g, nu.slice(ix));
        let src = nu.slice(ix);
        let p = pi.slice_mut(ix);
        for (j, mj) in m.iter().enumerate() {
            for (k, b) in bar.iter().enumerate() {
                p[j * g.nw() + k] = mj * b;
            }
        }
        let pv: Vec<f64> = src.iter().zip(pi.slice(ix)).map(|(a, b)| a - b).collect();
        perp.slice_mut(ix).copy_from_slice(&pv);
    }
    Ok((pi, perp))
}

/// D_ρ[ν] = ∫ |∂_v(ν m)|² m^{−1} du with face differences and m at faces taken as the
/// geometric mean of its neighbours.
pub fn fp_dissipation(grid: &PhaseGrid, slice: &[f64], rho: f64, weight: &WeightSpec) -> Result<NormValue> {
    if weight.variant.is_marginal() {
        return Err(domain("dissipation needs a (v, w) weight"));
    }
    let (nv, nw, dv) = (grid.nv(), grid.nw(), grid.dv());
    let (mut acc, mut div) = (0.0, false);
    for k in 0..nw {
        let w = grid.w.node(k);
        for j in 0..nv - 1 {
            let (l0, l1) = (weight.ln_eval(rho, grid.v.node(j), w), weight.ln_eval(rho, grid.v.node(j + 1), w));
            let (a, b) = (slice[j * nw + k], slice[(j + 1) * nw + k]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            // |ν_{j+1} m_{j+1} − ν_j m_j|² / m_face with m_face = e^{(l0+l1)/2}
            let d = b * (0.5 * (l1 - l0)).exp() - a * (0.5 * (l0 - l1)).exp();
            let ln_term = 2.0 * d.abs().ln();
            div |= ln_term + 0.5 * (l0 + l1) > LN_OVERFLOW;
            acc += d * d * (0.5 * (l0 + l1)).exp() / (dv * dv);
        }
    }
    Ok(NormValue::from_sum(acc * grid.cell_area(), div))
}

/// One side-by-side inequality evaluation `lhs ≤ rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityCheck {
    pub fn new(lhs: f64, rhs: f64, rel_tol: f64) -> Self {
        Self { lhs, rhs, holds: lhs <= rhs * (1.0 + rel_tol) + 1e-300 }
    }
}

/// ‖ν⊥‖²_{L²(m^ε)} ≤ D_ρ[ν⊥] for a slice with zero v-integral at every w.
pub fn gaussian_poincare(grid: &PhaseGrid, perp: &[f64], rho: f64, kappa: f64, rel_tol: f64) -> Result<InequalityCheck> {
    let m = WeightSpec::new(kappa, WeightVariant::MEps)?;
    let n = weighted_norm(grid, perp, 0, &m, rho)?.value;
    let d = fp_dissipation(grid, perp, rho, &m)?.value;
    Ok(InequalityCheck::new(n * n, d * d, rel_tol))
}

/// ‖ν‖ ≤ κ^{−½}‖∂_w ν‖ and ‖wν‖ ≤ (2/κ)‖∂_w ν‖ in L²(m^ε).
pub fn p_inequalities(grid: &PhaseGrid, slice: &[f64], rho: f64, kappa: f64, rel_tol: f64) -> Result<(InequalityCheck, InequalityCheck)> {
    let m = WeightSpec::new(kappa, WeightVariant::MEps)?;
    let n0 = weighted_norm(grid, slice, 0, &m, rho)?.value;
    let dw = weighted_sum(grid, &w_derivative(grid, slice, 1), &m, rho).0.sqrt();
    let ws: Vec<f64> = slice.iter().enumerate().map(|(i, x)| x * grid.w.node(i % grid.nw())).collect();
    let nw = weighted_norm(grid, &ws, 0, &m, rho)?.value;
    Ok((
        InequalityCheck::new(n0, dw / kappa.sqrt(), rel_tol),
        InequalityCheck::new(nw, 2.0 * dw / kappa, rel_tol),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product(grid: &PhaseGrid, rho: f64, p: &[f64]) -> Vec<f64> {
        let m = maxwellian(&grid.v, rho).unwrap().values;
        m.iter().flat_map(|a| p.iter().map(move |b| a * b)).collect()
    }

    fn gauss(axis: &Axis, var: f64, mean: f64) -> Vec<f64> {
        axis.nodes().iter().map(|w| (-(w - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()).collect()
    }

    #[test]
    fn weighted_norm_matches_refined_grid() {
        let (rho, kappa) = (1.2, 1.0);
        let m = WeightSpec::new(kappa, WeightVariant::MEps).unwrap();
        let norm_at = |n: usize| {
            let g = PhaseGrid::new(n, 8.0, n, 6.0).unwrap();
            let s = product(&g, rho, &gauss(&g.w, 0.5, 0.3));
            weighted_norm(&g, &s, 0, &m, rho).unwrap().value
        };
        let (coarse, fine) = (norm_at(129), norm_at(513));
        assert!((coarse - fine).abs() / fine < 0.01, "{coarse} {fine}");
        // closed form: ‖M⊗p‖² = ∫ p² m̄ dw with p Gaussian of variance s² < 1/κ
        let s2: f64 = 0.5;
        let want = (2.0 * std::f64::consts::PI / kappa).sqrt() / (2.0 * std::f64::consts::PI * s2)
            * (std::f64::consts::PI / (1.0 / s2 - kappa / 2.0)).sqrt()
            * (0.09 * (kappa / 2.0) / (1.0 - kappa * s2 / 2.0)).exp();
        assert!((fine * fine - want).abs() / want < 1e-3, "{} {want}", fine * fine);
    }

    #[test]
    fn w_constant_slice_has_equal_k0_and_k1_norms() {
        let g = PhaseGrid::new(33, 4.0, 17, 2.0).unwrap();
        let m = WeightSpec::new(1.0, WeightVariant::MEps).unwrap();
        let s = product(&g, 1.0, &vec![0.25; 17]);
        let n0 = weighted_norm(&g, &s, 0, &m, 1.0).unwrap().value;
        let n1 = weighted_norm(&g, &s, 1, &m, 1.0).unwrap().value;
        assert_eq!(n0, n1);
    }

    #[test]
    fn overflow_is_flagged() {
        let g = PhaseGrid::new(33, 40.0, 5, 1.0).unwrap();
        let m = WeightSpec::new(1.0, WeightVariant::MPlus).unwrap();
        let s = vec![1e-3; g.slice_len()];
        assert!(weighted_norm(&g, &s, 0, &m, 1.0).unwrap().diverged);
    }

    #[test]
    fn projection_properties() {
        let g = PhaseGrid::new(64, 7.0, 32, 3.0).unwrap();
        let rho = 1.1;
        let mut nu = DensityField::zeros(g, 1, 0.0);
        for j in 0..64 {
            for k in 0..32 {
                let (v, w) = (g.v.node(j), g.w.node(k));
                nu.values_mut()[g.index(j, k)] = (-0.6 * (v - 0.4 * w).powi(2) - 0.8 * w * w).exp() * (1.0 + 0.2 * (v * w).sin());
            }
        }
        nu.renormalize();
        let (pi, perp) = projection_pi(&nu, &[rho]).unwrap();
        let pm = perp.w_marginal(0);
        assert!(pm.iter().all(|x| x.abs() < 1e-12));
        let m = WeightSpec::new(1.0, WeightVariant::MEps).unwrap();
        let a = weighted_norm(&g, nu.slice(0), 0, &m, rho).unwrap().value.powi(2);
        let b = weighted_norm(&g, pi.slice(0), 0, &m, rho).unwrap().value.powi(2);
        let c = weighted_norm(&g, perp.slice(0), 0, &m, rho).unwrap().value.powi(2);
        assert!((a - b - c).abs() / a < 1e-8, "{a} {b} {c}");
        let (_, again) = projection_pi(&pi, &[rho]).unwrap();
        assert!(again.values().iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn dissipation_vanishes_on_maxwellian_products() {
        let g = PhaseGrid::new(64, 7.0, 16, 3.0).unwrap();
        let rho = 1.2;
        let m = WeightSpec::new(1.0, WeightVariant::MEps).unwrap();
        let s = product(&g, rho, &gauss(&g.w, 0.3, 0.0));
        assert!(fp_dissipation(&g, &s, rho, &m).unwrap().value < 1e-10);
    }

    #[test]
    fn inequalities_on_smooth_slices() {
        let g = PhaseGrid::new(128, 8.0, 96, 6.0).unwrap();
        let (rho, kappa) = (1.1, 1.0);
        let mut s = vec![0.0; g.slice_len()];
        for j in 0..g.nv() {
            for k in 0..g.nw() {
                let (v, w) = (g.v.node(j), g.w.node(k));
                s[g.index(j, k)] = (-0.55 * v * v - 0.9 * w * w).exp() * (1.0 + 0.3 * v + 0.2 * (v * v - 1.0) * w);
            }
        }
        let nu = DensityField::from_values(g, 1, s.clone(), 0.0).unwrap();
        let (_, perp) = projection_pi(&nu, &[rho]).unwrap();
        assert!(gaussian_poincare(&g, perp.slice(0), rho, kappa, 1e-3).unwrap().holds);
        let (a, b) = p_inequalities(&g, &s, rho, kappa, 1e-3).unwrap();
        assert!(a.holds && b.holds, "{a:?} {b:?}");
    }
}
