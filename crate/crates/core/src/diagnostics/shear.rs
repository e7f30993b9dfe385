//! Shear change of variables g(v, w) = ν(v, w − γv) and the twin comparison between the
//! sheared marginal ḡ and the limit marginal ν̄.
//!
//! ḡ and ν̄ solve transport equations of the common form
//! ∂t f + λ∂w[(b₁ + b₃) f] = λ²∂w² f and ∂t g + λ∂w[b₂ g] = 0 with λ = aε/ρ₀,
//! b₂ = −bw/λ, b₃ = −w and b₁ − b₂ the ḡ-weighted v-average of
//! B₀(θv, −γv) + bθv. Along such a pair d/dt H_{1/2}[ḡ|ν̄] ≤ R with
//! R = ∫ ¼|b₁ − b₂|² ḡ + λ|∂w[b₃ν̄ − λ∂wν̄]| dw.

use serde::{Deserialize, Serialize};

use super::entropy::{half_entropy, LOG_FLOOR};
use crate::error::{domain, shape, Result};
use crate::model::Model;
use crate::phase_space::field::{slice_v_marginal, slice_w_marginal};
use crate::phase_space::interp::linear;
use crate::phase_space::{Axis, DensityField};

/// γ = aεθ/ρ₀ per node.
pub fn shear_gamma(a: f64, eps: f64, theta: &[f64], rho0: &[f64]) -> Vec<f64> {
    theta.iter().zip(rho0).map(|(t, r)| a * eps * t / r).collect()
}

/// g(x, v, w) = ν(x, v, w − γ(x)v), linear in w, zero outside the box. Also returns the
/// mass lost per node.
pub fn shear_transform(nu: &DensityField, gamma: &[f64]) -> Result<(DensityField, Vec<f64>)> {
    if gamma.len() != nu.nx() {
        return Err(shape("gamma and density disagree on nx"));
    }
    let g = *nu.grid();
    if let Some(x) = gamma.iter().find(|x| !x.is_finite()) {
        return Err(domain(format!("non-finite shear {x}")));
    }
    let mut out = DensityField::zeros(g, nu.nx(), nu.time());
    let mut lost = Vec::with_capacity(nu.nx());
    let wn = g.w.nodes();
    for (ix, &gm) in gamma.iter().enumerate() {
        let src = nu.slice(ix);
        let dst = out.slice_mut(ix);
        for j in 0..g.nv() {
            let shift = gm * g.v.node(j);
            let row = &src[j * g.nw()..(j + 1) * g.nw()];
            if shift == 0.0 {
                dst[j * g.nw()..(j + 1) * g.nw()].copy_from_slice(row);
                continue;
            }
            for (k, w) in wn.iter().enumerate() {
                dst[j * g.nw() + k] = linear(&g.w, row, w - shift);
            }
        }
        lost.push(nu.mass(ix) - out.mass(ix));
    }
    Ok((out, lost))
}

/// One evaluation of the twin pair at a node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinSample {
    pub t: f64,
    pub half_entropy: f64,
    pub l1: f64,
    /// ¼∫|b₁ − b₂|² ḡ dw
    pub drift_term: f64,
    /// λ∫|∂w[b₃ν̄ − λ∂wν̄]| dw
    pub diffusion_term: f64,
}

impl TwinSample {
    pub fn rate_bound(&self) -> f64 {
        self.drift_term + self.diffusion_term
    }
}

/// Frame data of one node needed by [`twin_sample`].
#[derive(Clone, Copy, Debug)]
pub struct TwinFrame {
    pub t: f64,
    pub eps: f64,
    pub voltage: f64,
    pub theta: f64,
    pub rho: f64,
    pub psi_rho: f64,
}

/// Evaluates H_{1/2}[ḡ|ν̄] and the rate bound R at one node.
///
/// `slice` is ν on `grid` (physical rescaled frame) and `bar_nu` the limit marginal on
/// the same w-axis.
pub fn twin_sample(
    model: &Model,
    grid: &crate::phase_space::PhaseGrid,
    slice: &[f64],
    bar_nu: &[f64],
    frame: TwinFrame,
) -> Result<TwinSample> {
    if bar_nu.len() != grid.nw() || slice.len() != grid.slice_len() {
        return Err(shape("twin inputs do not match the grid"));
    }
    let TwinFrame { t, eps, voltage, theta, rho, psi_rho } = frame;
    let (a, b) = (model.adaptation.a, model.adaptation.b);
    let lambda = a * eps / rho;
    let gamma = a * eps * theta / rho;
    let nu = DensityField::from_values(*grid, 1, slice.to_vec(), t)?;
    let (sheared, _) = shear_transform(&nu, &[gamma])?;
    let gs = sheared.slice(0);
    let bar_g = slice_w_marginal(grid, gs);
    let profile = slice_v_marginal(grid, slice);
    let err = model.frame_nonlinearity_error(&profile, grid, voltage, theta);
    let n0 = model.drift.eval(voltage);
    let coeff: Vec<f64> = (0..grid.nv())
        .map(|j| {
            let v = grid.v.node(j);
            model.drift.eval(voltage + theta * v) - n0 + gamma * v - theta * v * psi_rho - err + b * theta * v
        })
        .collect();
    let (nw, dv, dw) = (grid.nw(), grid.dv(), grid.dw());
    let mut drift_term = 0.0;
    for k in 0..nw {
        if bar_g[k] < LOG_FLOOR {
            continue;
        }
        let flux: f64 = (0..grid.nv()).map(|j| coeff[j] * gs[j * nw + k]).sum::<f64>() * dv;
        drift_term += flux * flux / bar_g[k];
    }
    drift_term *= 0.25 * dw;
    let d1 = derivative(&grid.w, bar_nu);
    let inner: Vec<f64> = (0..nw).map(|k| -grid.w.node(k) * bar_nu[k] - lambda * d1[k]).collect();
    let diffusion_term = lambda * derivative(&grid.w, &inner).iter().map(|x| x.abs()).sum::<f64>() * dw;
    Ok(TwinSample {
        t,
        half_entropy: half_entropy(&bar_g, bar_nu, dw),
        l1: bar_g.iter().zip(bar_nu).map(|(x, y)| (x - y).abs()).sum::<f64>() * dw,
        drift_term,
        diffusion_term,
    })
}

fn derivative(axis: &Axis, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (f[hi] - f[lo]) / ((hi - lo) as f64 * axis.spacing())
        })
        .collect()
}

/// Outcome of checking dH_{1/2}/dt ≤ R + tolerance between consecutive samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TwinMonitor {
    pub checked: usize,
    pub violations: usize,
    /// Largest (dH/dt − R) seen; negative when the bound always held.
    pub worst_excess: f64,
    /// Final H_{1/2} against the time-integrated bound H(0) + ∫R.
    pub integrated_ok: bool,
}

/// `tolerance` is the allowed excess of the finite-difference rate over the trapezoidal
/// mean of R on each interval.
pub fn monitor_twin(samples: &[TwinSample], tolerance: f64) -> TwinMonitor {
    let mut m = TwinMonitor { worst_excess: f64::NEG_INFINITY, integrated_ok: true, ..Default::default() };
    let mut integral = 0.0;
    for p in samples.windows(2) {
        let dt = p[1].t - p[0].t;
        if !(dt > 0.0) {
            continue;
        }
        let rate = (p[1].half_entropy - p[0].half_entropy) / dt;
        let bound = 0.5 * (p[0].rate_bound() + p[1].rate_bound());
        integral += bound * dt;
        let excess = rate - bound;
        m.checked += 1;
        m.worst_excess = m.worst_excess.max(excess);
        if excess > tolerance {
            m.violations += 1;
        }
    }
    if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
        m.integrated_ok = last.half_entropy <= first.half_entropy + integral + tolerance * (last.t - first.t);
    }
    m
}
