//! Entropy-type functionals on one (v, w) slice, or on a w-profile where noted.
//!
//! Entries below [`LOG_FLOOR`] count as zero, with 0·ln 0 = 0.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::phase_space::field::{l1, slice_w_marginal};
use crate::phase_space::{maxwellian, PhaseGrid};

pub const LOG_FLOOR: f64 = 1e-300;

#[inline]
fn x_ln_ratio(x: f64, y: f64) -> f64 {
    if x < LOG_FLOOR {
        0.0
    } else {
        x * (x / y.max(LOG_FLOOR)).ln()
    }
}

/// ∫ μ ln μ du.
pub fn boltzmann_entropy(grid: &PhaseGrid, slice: &[f64]) -> f64 {
    slice.iter().map(|&x| x_ln_ratio(x, 1.0)).sum::<f64>() * grid.cell_area()
}

/// M_ρ(v_j) ⊗ p(w_k) as a slice, with the renormalized discrete Maxwellian.
fn maxwellian_times(grid: &PhaseGrid, rho: f64, profile: &[f64]) -> Result<Vec<f64>> {
    let m = maxwellian(&grid.v, rho)?.values;
    Ok(m.iter().flat_map(|a| profile.iter().map(move |b| a * b)).collect())
}

/// ∫ ν ln(ν / M_ρ) du.
pub fn free_energy(grid: &PhaseGrid, slice: &[f64], rho: f64) -> Result<f64> {
    let m = maxwellian(&grid.v, rho)?.values;
    let nw = grid.nw();
    Ok(slice.iter().enumerate().map(|(i, &x)| x_ln_ratio(x, m[i / nw])).sum::<f64>() * grid.cell_area())
}

/// H[ν | M_ρ ⊗ ν̄] with ν̄ the w-marginal of ν.
pub fn relative_entropy(grid: &PhaseGrid, slice: &[f64], rho: f64) -> Result<f64> {
    let bar = slice_w_marginal(grid, slice);
    let q = maxwellian_times(grid, rho, &bar)?;
    Ok(slice.iter().zip(&q).map(|(&x, &y)| x_ln_ratio(x, y)).sum::<f64>() * grid.cell_area())
}

/// ‖ν − M_ρ ⊗ ν̄‖₁ for the same pair as [`relative_entropy`].
pub fn distance_to_product(grid: &PhaseGrid, slice: &[f64], rho: f64) -> Result<f64> {
    let bar = slice_w_marginal(grid, slice);
    let q = maxwellian_times(grid, rho, &bar)?;
    Ok(l1(grid, slice, &q))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherValue {
    pub value: f64,
    /// Share of cells skipped because they or a v-neighbour sit below the floor.
    pub floored_fraction: f64,
    pub unreliable: bool,
}

/// I[ν | M_ρ] = ∫ |∂v ln ν + ρ v|² ν du, centred differences of ln ν in v.
pub fn fisher_information(grid: &PhaseGrid, slice: &[f64], rho: f64) -> FisherValue {
    let (nv, nw, dv) = (grid.nv(), grid.nw(), grid.dv());
    let (mut acc, mut floored) = (0.0, 0usize);
    for j in 0..nv {
        let v = grid.v.node(j);
        for k in 0..nw {
            let x = slice[j * nw + k];
            let (lo, hi) = (j.saturating_sub(1), (j + 1).min(nv - 1));
            let (a, b) = (slice[lo * nw + k], slice[hi * nw + k]);
            if x < LOG_FLOOR || a < LOG_FLOOR || b < LOG_FLOOR {
                floored += 1;
                continue;
            }
            let d = (b.ln() - a.ln()) / ((hi - lo) as f64 * dv) + rho * v;
            acc += d * d * x;
        }
    }
    let frac = floored as f64 / (nv * nw) as f64;
    FisherValue { value: acc * grid.cell_area(), floored_fraction: frac, unreliable: frac > 0.5 }
}

/// H_{1/2}[f | g] = ∫ f ln(2f / (f + g)) for samples with cell measure `cell`.
pub fn half_entropy(f: &[f64], g: &[f64], cell: f64) -> f64 {
    f.iter().zip(g).map(|(&a, &b)| x_ln_ratio(2.0 * a, a + b) * 0.5).sum::<f64>() * cell
}

/// I_{1/2}[f | g] = ∫ |∇ ln(2f / (f + g))|² f on a (v, w) slice, centred differences.
pub fn half_fisher(grid: &PhaseGrid, f: &[f64], g: &[f64]) -> f64 {
    let (nv, nw) = (grid.nv(), grid.nw());
    let h: Vec<f64> = f
        .iter()
        .zip(g)
        .map(|(&a, &b)| if a < LOG_FLOOR { f64::NAN } else { (2.0 * a / (a + b)).ln() })
        .collect();
    let diff = |i0: usize, i1: usize, span: f64| -> f64 {
        let d = (h[i1] - h[i0]) / span;
        if d.is_finite() {
            d
        } else {
            0.0
        }
    };
    let mut acc = 0.0;
    for j in 0..nv {
        for k in 0..nw {
            let x = f[j * nw + k];
            if x < LOG_FLOOR {
                continue;
            }
            let (jl, jh) = (j.saturating_sub(1), (j + 1).min(nv - 1));
            let (kl, kh) = (k.saturating_sub(1), (k + 1).min(nw - 1));
            let dv = diff(jl * nw + k, jh * nw + k, (jh - jl) as f64 * grid.dv());
            let dw = diff(j * nw + kl, j * nw + kh, (kh - kl) as f64 * grid.dw());
            acc += (dv * dv + dw * dw) * x;
        }
    }
    acc * grid.cell_area()
}

/// Outcome of (1/8)‖f − g‖₁² ≤ H_{1/2}[f | g] ≤ ‖f − g‖₁.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub l1: f64,
    pub half_entropy: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// min(H − ‖f−g‖²/8, ‖f−g‖ − H)
    pub slack: f64,
}

pub fn ck_sandwich(f: &[f64], g: &[f64], cell: f64) -> Sandwich {
    let d = f.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() * cell;
    let h = half_entropy(f, g, cell);
    // round-off allowance for identical inputs
    let tol = 1e-14;
    let (lo, hi) = (h - d * d / 8.0, d - h);
    Sandwich { l1: d, half_entropy: h, lower_ok: lo >= -tol, upper_ok: hi >= -tol, slack: lo.min(hi) }
}

/// ‖ν − M_ρ⊗ν̄‖₁² ≤ 2 H[ν | M_ρ⊗ν̄]; returns (holds, slack).
pub fn csiszar_kullback(grid: &PhaseGrid, slice: &[f64], rho: f64) -> Result<(bool, f64)> {
    let h = relative_entropy(grid, slice, rho)?;
    let d = distance_to_product(grid, slice, rho)?;
    let slack = 2.0 * h - d * d;
    Ok((slack >= -1e-12, slack))
}
