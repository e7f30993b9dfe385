//! Rescaled-frame stepper: ν on a (v, w) box that follows the mean (V, W) and the
//! concentration width θ, coupled to the closed ODEs for (V, W).
//!
//! The w-axis is comoving with the contraction of the adaptation: the solver stores
//! f(v, w̃) = e^{−bt} ν(v, e^{−bt} w̃) on a fixed grid in w̃. In these coordinates the
//! linear −bw drift disappears, the remaining w̃-drift is e^{bt} a θ v, and mass in
//! (v, w̃) is exactly the mass of ν. [`CoupledState::nu`] maps back to ν on the
//! contracted physical grid.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fokker_planck::fokker_planck_in_place;
use super::transport::{admissible_dt, advance_slice, advance_slice_subcycled, FaceDrifts, TransportScheme, TransportWork};
use crate::error::{contract, domain, shape, Error, Result};
use crate::model::{DriftSpec, Model};
use crate::phase_space::field::{slice_means, slice_v_marginal, slice_w_marginal};
use crate::phase_space::theta::integrated_inverse_theta_squared;
use crate::phase_space::{theta, DensityField, MacroFields, PhaseGrid, ThetaField};

#[derive(Clone, Debug)]
pub struct CoupledState {
    comoving: DensityField,
    pub frame: MacroFields,
    pub t: f64,
    pub eps: f64,
    b: f64,
    /// Signed sum of the frame corrections (V, W) applied by re-centring.
    pub closure_offset: Vec<(f64, f64)>,
}

impl CoupledState {
    /// Starts at t = 0 from ν₀ and the frame (V₀, W₀).
    pub fn new(nu0: DensityField, frame: MacroFields, eps: f64, b: f64) -> Result<Self> {
        if frame.len() != nu0.nx() {
            return Err(shape("frame and density disagree on nx"));
        }
        if !(eps > 0.0 && eps <= 1.0) || !(b > 0.0) {
            return Err(domain("rescaled state needs eps in (0, 1] and b > 0"));
        }
        nu0.check_density(1e-10)?;
        let mut comoving = nu0;
        comoving.set_time(0.0);
        let n = comoving.nx();
        Ok(Self { comoving, frame, t: 0.0, eps, b, closure_offset: vec![(0.0, 0.0); n] })
    }

    /// The stored density f(v, w̃) on the fixed comoving grid.
    pub fn comoving(&self) -> &DensityField {
        &self.comoving
    }

    /// e^{bt}: ratio between comoving and physical w.
    pub fn contraction(&self) -> f64 {
        (self.b * self.t).exp()
    }

    /// Grid of ν in the physical rescaled frame at the current time.
    pub fn physical_grid(&self) -> PhaseGrid {
        let g = self.comoving.grid();
        PhaseGrid::new(g.nv(), g.v.half_width(), g.nw(), g.w.half_width() / self.contraction())
            .expect("contracted grid stays valid")
    }

    /// ν^ε on the contracted physical grid.
    pub fn nu(&self) -> DensityField {
        let k = self.contraction();
        let mut out = self.comoving.clone();
        out.values_mut().iter_mut().for_each(|x| *x *= k);
        out.set_grid(self.physical_grid());
        out.set_time(self.t);
        out
    }

    pub fn theta(&self, model: &Model) -> ThetaField {
        ThetaField::at(self.t, model.rho0(), self.eps).expect("eps validated at construction")
    }

    /// Per node (∫vν, ∫wν) in the rescaled frame; both vanish for a consistent state.
    pub fn frame_means(&self) -> Vec<(f64, f64)> {
        let k = self.contraction();
        (0..self.comoving.nx())
            .map(|ix| {
                let (mv, mw) = slice_means(self.comoving.grid(), self.comoving.slice(ix));
                (mv, mw / k)
            })
            .collect()
    }

    /// E evaluated in the frame: ∫N(V + θv)ν du − N(V).
    pub fn frame_error(&self, model: &Model) -> Vec<f64> {
        let th = self.theta(model);
        let g = self.comoving.grid();
        (0..self.comoving.nx())
            .map(|ix| {
                let p = slice_v_marginal(g, self.comoving.slice(ix));
                model.frame_nonlinearity_error(&p, g, self.frame.voltage[ix], th.values[ix])
            })
            .collect()
    }

    /// w-marginal of the comoving density; the physical ν̄^ε at w = e^{−bt}w̃_k is
    /// e^{bt} times entry k.
    pub fn comoving_w_marginal(&self, ix: usize) -> Vec<f64> {
        slice_w_marginal(self.comoving.grid(), self.comoving.slice(ix))
    }

    /// ∫ v f dv on the comoving grid, one value per w̃ node.
    pub fn comoving_flux(&self, ix: usize) -> Vec<f64> {
        let g = self.comoving.grid();
        let mut out = vec![0.0; g.nw()];
        for (j, row) in self.comoving.slice(ix).chunks(g.nw()).enumerate() {
            let v = g.v.node(j);
            for (o, x) in out.iter_mut().zip(row) {
                *o += v * x;
            }
        }
        out.iter_mut().for_each(|o| *o *= g.dv());
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub substeps: usize,
    pub clamped: usize,
    pub mass_defect: f64,
    /// Largest frame correction |ΔV|, |ΔW| made by re-centring in this step.
    pub recentre: f64,
    /// Largest |∫vν|, |∫wν| left after re-centring.
    pub residual_mean: f64,
}

impl StepTelemetry {
    fn absorb(&mut self, other: &StepTelemetry) {
        self.substeps = self.substeps.max(other.substeps);
        self.clamped += other.clamped;
        self.mass_defect = self.mass_defect.max(other.mass_defect);
        self.recentre = self.recentre.max(other.recentre);
        self.residual_mean = self.residual_mean.max(other.residual_mean);
    }
}

/// Frame of one node over a step: V moves linearly from `v0` to `v1`, and E follows θ
/// and V with the v-profile frozen at the start of the step.
#[derive(Clone)]
struct NodeFrame<'a> {
    drift: &'a DriftSpec,
    a: f64,
    b: f64,
    eps: f64,
    rho: f64,
    psi_rho: f64,
    profile: Vec<f64>,
    t0: f64,
    dt: f64,
    v0: f64,
    v1: f64,
}

impl NodeFrame<'_> {
    /// ∫N(vc + θ(s)v) p(v) dv − N(vc).
    fn error_at(&self, grid: &PhaseGrid, s: f64, vc: f64) -> f64 {
        let th = theta(s, self.rho, self.eps);
        let acc: f64 = self
            .profile
            .iter()
            .enumerate()
            .map(|(j, p)| self.drift.eval(vc + th * grid.v.node(j)) * p)
            .sum();
        acc * grid.dv() - self.drift.eval(vc)
    }

    fn drifts(&self, grid: &PhaseGrid, s: f64, out: &mut FaceDrifts) {
        let lam = ((s - self.t0) / self.dt).clamp(0.0, 1.0);
        let vc = self.v0 + lam * (self.v1 - self.v0);
        let th = theta(s, self.rho, self.eps);
        let k = (self.b * s).exp();
        let (nv, nw) = (grid.nv(), grid.nw());
        let nvc = self.drift.eval(vc);
        let err = self.error_at(grid, s, vc);
        let wn: Vec<f64> = grid.w.nodes();
        out.v.resize((nv - 1) * nw, 0.0);
        for j in 0..nv - 1 {
            let v = grid.v.face(j);
            let base = (self.drift.eval(vc + th * v) - nvc - th * v * self.psi_rho - err) / th;
            let row = &mut out.v[j * nw..(j + 1) * nw];
            for (o, w) in row.iter_mut().zip(&wn) {
                *o = base - w / (k * th);
            }
        }
        out.w.resize(nv * (nw - 1), 0.0);
        for j in 0..nv {
            let c = k * self.a * th * grid.v.node(j);
            out.w[j * (nw - 1)..(j + 1) * (nw - 1)].iter_mut().for_each(|o| *o = c);
        }
    }
}

/// Transport of one slice over [s0, s1] with drifts rebuilt at every sub-step midpoint.
fn transport_node(
    slice: &mut [f64],
    grid: &PhaseGrid,
    frame: &NodeFrame,
    s0: f64,
    s1: f64,
    scheme: TransportScheme,
    cfl_safety: f64,
    work: &mut TransportWork,
) -> Result<(usize, usize)> {
    let mut drifts = FaceDrifts::zeros(grid);
    let (mut s, mut h, mut steps, mut clamped) = (s0, s1 - s0, 0, 0);
    while s1 - s > 1e-14 * (1.0 + s1.abs()) {
        h = h.min(s1 - s);
        let mut tries = 0;
        loop {
            frame.drifts(grid, s + 0.5 * h, &mut drifts);
            let adm = admissible_dt(grid, &drifts, scheme, cfl_safety);
            if h <= adm {
                break;
            }
            tries += 1;
            if tries > 20 || !(adm > 0.0) {
                return Err(Error::Cfl { requested: h, admissible: adm });
            }
            h = 0.95 * adm;
        }
        clamped += advance_slice(slice, grid, &drifts, h, scheme, work);
        s += h;
        steps += 1;
        // let the step grow back after the stiff part of the layer
        h *= 1.5;
    }
    Ok((steps, clamped))
}

/// Strang-split stepper for the rescaled coupled system.
#[derive(Clone, Debug)]
pub struct RescaledSolver<'m> {
    model: &'m Model,
    pub scheme: TransportScheme,
    pub cfl_safety: f64,
}

impl<'m> RescaledSolver<'m> {
    pub fn new(model: &'m Model, scheme: TransportScheme, cfl_safety: f64) -> Result<Self> {
        if !(cfl_safety > 0.0 && cfl_safety < 1.0) {
            return Err(domain("cfl_safety must lie in (0, 1)"));
        }
        Ok(Self { model, scheme, cfl_safety })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// (dV/dt, dW/dt) = (N(V) + E − W − L[V], aV + c − bW).
    fn macro_rate(&self, v: &[f64], w: &[f64], e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let l = self.model.nonlocal_operator(v)?;
        let p = &self.model.adaptation;
        let dv = (0..v.len()).map(|i| self.model.drift.eval(v[i]) + e[i] - w[i] - l[i]).collect();
        let dw = (0..v.len()).map(|i| p.a * v[i] + p.c - p.b * w[i]).collect();
        Ok((dv, dw))
    }

    /// Heun step of the macro ODEs, E re-evaluated at each stage from the frozen profiles.
    fn macro_step(&self, frame: &MacroFields, nodes: &[NodeFrame], grid: &PhaseGrid, t0: f64, dt: f64) -> Result<MacroFields> {
        let (v0, w0) = (&frame.voltage, &frame.adaptation);
        let e0: Vec<f64> = nodes.iter().zip(v0).map(|(n, v)| n.error_at(grid, t0, *v)).collect();
        let (k1v, k1w) = self.macro_rate(v0, w0, &e0)?;
        let vp: Vec<f64> = v0.iter().zip(&k1v).map(|(a, k)| a + dt * k).collect();
        let wp: Vec<f64> = w0.iter().zip(&k1w).map(|(a, k)| a + dt * k).collect();
        let e1: Vec<f64> = nodes.iter().zip(&vp).map(|(n, v)| n.error_at(grid, t0 + dt, *v)).collect();
        let (k2v, k2w) = self.macro_rate(&vp, &wp, &e1)?;
        let v1 = (0..v0.len()).map(|i| v0[i] + 0.5 * dt * (k1v[i] + k2v[i])).collect();
        let w1 = (0..v0.len()).map(|i| w0[i] + 0.5 * dt * (k1w[i] + k2w[i])).collect();
        MacroFields::new(v1, w1)
    }

    fn half_transport(
        &self,
        state: &mut CoupledState,
        frames: &[NodeFrame],
        s0: f64,
        s1: f64,
    ) -> Result<(usize, usize)> {
        let grid = *state.comoving.grid();
        let (scheme, cfl) = (self.scheme, self.cfl_safety);
        let results: Vec<Result<(usize, usize)>> = state
            .comoving
            .values_mut()
            .par_chunks_mut(grid.slice_len())
            .zip(frames.par_iter())
            .map_init(TransportWork::default, |work, (s, f)| {
                transport_node(s, &grid, f, s0, s1, scheme, cfl, work)
            })
            .collect();
        let mut out = (0, 0);
        for r in results {
            let (n, c) = r?;
            out.0 = out.0.max(n);
            out.1 += c;
        }
        Ok(out)
    }

    /// Advances the state by `dt`.
    ///
    /// The macro update runs first with E frozen at the start of the step so that both
    /// transport halves see the frame at their own midpoints; then transport over dt/2,
    /// the implicit Fokker–Planck step over dt, and transport over the second half.
    pub fn step(&self, state: &mut CoupledState, dt: f64) -> Result<StepTelemetry> {
        if !(dt > 0.0) {
            return Err(domain("time step must be positive"));
        }
        let m = self.model;
        let nx = m.nx();
        if state.comoving.nx() != nx {
            return Err(shape("state and model disagree on nx"));
        }
        let t0 = state.t;
        let grid = *state.comoving.grid();
        let mut frames: Vec<NodeFrame> = (0..nx)
            .map(|ix| NodeFrame {
                drift: &m.drift,
                a: m.adaptation.a,
                b: m.adaptation.b,
                eps: state.eps,
                rho: m.rho0()[ix],
                psi_rho: m.psi_rho0()[ix],
                profile: slice_v_marginal(&grid, state.comoving.slice(ix)),
                t0,
                dt,
                v0: state.frame.voltage[ix],
                v1: state.frame.voltage[ix],
            })
            .collect();
        let next = self.macro_step(&state.frame, &frames, &grid, t0, dt)?;
        if next.voltage.iter().chain(&next.adaptation).any(|x| !x.is_finite()) {
            return Err(Error::Solver("macro frame diverged".into()));
        }
        for (f, v1) in frames.iter_mut().zip(&next.voltage) {
            f.v1 = *v1;
        }

        let mut tel = StepTelemetry::default();
        let (n1, c1) = self.half_transport(state, &frames, t0, t0 + 0.5 * dt)?;

        let prefactor: Vec<f64> = m
            .rho0()
            .iter()
            .map(|&r| integrated_inverse_theta_squared(t0, t0 + dt, r, state.eps) / dt)
            .collect();
        fokker_planck_in_place(&mut state.comoving, dt, &prefactor, m.rho0(), &vec![0.0; nx])?;

        let (n2, c2) = self.half_transport(state, &frames, t0 + 0.5 * dt, t0 + dt)?;
        tel.substeps = n1.max(n2);
        tel.clamped = c1 + c2;
        if tel.clamped > 0 {
            warn!("rescaled step at t={t0:.4}: {} negative entries clamped", tel.clamped);
        }

        state.frame = next;
        state.t = t0 + dt;
        state.comoving.set_time(state.t);
        let (moved, left) = recentre(state, m)?;
        tel.recentre = moved;
        tel.residual_mean = left;
        tel.mass_defect = state.comoving.masses().iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
        if tel.mass_defect > 1e-10 {
            return Err(contract(format!("mass defect {:.3e} after rescaled step", tel.mass_defect)));
        }
        Ok(tel)
    }

    /// Runs `steps` steps, returning the worst telemetry seen.
    pub fn run(&self, state: &mut CoupledState, dt: f64, steps: usize) -> Result<StepTelemetry> {
        let mut worst = StepTelemetry::default();
        for _ in 0..steps {
            let t = self.step(state, dt)?;
            worst.absorb(&t);
        }
        Ok(worst)
    }
}

/// Moves the frame onto the actual means of ν and shifts ν back to zero mean.
///
/// The shift is one conservative donor-cell transport step with a constant velocity,
/// which moves the first moments exactly (up to mass on the boundary cells) at the cost
/// of a numerical diffusion proportional to the tiny shift. Returns the largest frame
/// correction and the largest mean left afterwards.
fn recentre(state: &mut CoupledState, model: &Model) -> Result<(f64, f64)> {
    let grid = *state.comoving.grid();
    let k = state.contraction();
    let th = state.theta(model);
    let means: Vec<(f64, f64)> =
        (0..state.comoving.nx()).map(|ix| slice_means(&grid, state.comoving.slice(ix))).collect();
    let mut moved = 0.0_f64;
    let mut work = TransportWork::default();
    for (ix, &(mv, mw)) in means.iter().enumerate() {
        if mv == 0.0 && mw == 0.0 {
            continue;
        }
        let drifts = FaceDrifts {
            v: vec![-mv; (grid.nv() - 1) * grid.nw()],
            w: vec![-mw; grid.nv() * (grid.nw() - 1)],
        };
        advance_slice_subcycled(state.comoving.slice_mut(ix), &grid, &drifts, 1.0, TransportScheme::Upwind, 0.9, &mut work);
        let (dv, dw) = (th.values[ix] * mv, mw / k);
        state.frame.voltage[ix] += dv;
        state.frame.adaptation[ix] += dw;
        state.closure_offset[ix].0 += dv;
        state.closure_offset[ix].1 += dw;
        moved = moved.max(dv.abs()).max(dw.abs());
    }
    let left = state
        .frame_means()
        .iter()
        .fold(0.0_f64, |a, (mv, mw)| a.max(mv.abs()).max(mw.abs()));
    Ok((moved, left))
}

/// L¹_w residual of the marginal equation ∂tν̄ − b∂w(wν̄) + aθ∂w∫vν dv = 0 between two
/// states of the same run, one value per node.
///
/// In comoving coordinates the equation reads ∂t ḡ + e^{bt} a θ ∂w̃ ∫v f dv = 0 and the
/// L¹ norm is the same in both frames, so no interpolation is needed.
pub fn marginal_residual(model: &Model, earlier: &CoupledState, later: &CoupledState) -> Result<Vec<f64>> {
    let dt = later.t - earlier.t;
    if !(dt > 0.0) {
        return Err(domain("marginal residual needs two distinct stored times"));
    }
    if earlier.comoving.grid() != later.comoving.grid() || earlier.comoving.nx() != later.comoving.nx() {
        return Err(shape("states come from different grids"));
    }
    let g = *later.comoving.grid();
    let tm = 0.5 * (earlier.t + later.t);
    let a = model.adaptation.a;
    let b = model.adaptation.b;
    let dw = g.dw();
    Ok((0..later.comoving.nx())
        .map(|ix| {
            let (m0, m1) = (earlier.comoving_w_marginal(ix), later.comoving_w_marginal(ix));
            let flux_term: Vec<f64> = if a == 0.0 {
                vec![0.0; g.nw()]
            } else {
                let th = theta(tm, model.rho0()[ix], later.eps);
                let (j0, j1) = (earlier.comoving_flux(ix), later.comoving_flux(ix));
                let j: Vec<f64> = j0.iter().zip(&j1).map(|(x, y)| 0.5 * (x + y)).collect();
                let c = (b * tm).exp() * a * th;
                (0..g.nw())
                    .map(|k| {
                        let d = if k == 0 {
                            (j[1] - j[0]) / dw
                        } else if k == g.nw() - 1 {
                            (j[k] - j[k - 1]) / dw
                        } else {
                            (j[k + 1] - j[k - 1]) / (2.0 * dw)
                        };
                        c * d
                    })
                    .collect()
            };
            (0..g.nw()).map(|k| ((m1[k] - m0[k]) / dt + flux_term[k]).abs()).sum::<f64>() * dw
        })
        .collect())
}

/// Step size that keeps the relative change of θ² per step below `tolerance`, capped
/// at `dt_max`. Inside the initial layer this shrinks to about tolerance·ε/(2ρ).
pub fn layer_resolving_step(t: f64, dt_max: f64, eps: f64, rho_max: f64, tolerance: f64) -> f64 {
    let th2 = crate::phase_space::theta_squared(t, rho_max, eps);
    let excess = (th2 - eps).max(0.0) / th2;
    if excess <= 0.0 {
        return dt_max;
    }
    dt_max.min(tolerance * eps / (2.0 * rho_max * excess))
}
