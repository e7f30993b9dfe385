//! One ε of a sweep: integrates the rescaled system and the limit system side by side
//! and records every error curve and inequality check at the sample times.

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::setup::Prepared;
use crate::config::RunConfig;
use crate::diagnostics::{
    ck_sandwich, csiszar_kullback, equicontinuity_bound, fisher_information, free_energy, gaussian_poincare,
    half_entropy, initial_lipschitz_m1, marginal_weighted_norm, monitor_twin, p_inequalities, relative_entropy,
    translate_w, twin_sample, weighted_norm, TwinFrame, TwinMonitor, TwinSample, WeightSpec, WeightVariant,
};
use crate::error::Result;
use crate::kinetic::{layer_resolving_step, CoupledState, RescaledSolver};
use crate::macro_solver::{evolve_bar_mu, LimitSolver, LimitState};
use crate::model::Model;
use crate::phase_space::field::{centered_v_moment, l1, slice_v_marginal, slice_w_marginal};
use crate::phase_space::{compose_asymptotic_profile, maxwellian, DensityField, PhaseGrid};

/// Metrics recorded at every sample time, worst node. Names double as CSV keys.
pub mod metric {
    pub const L1_INTEGRATED: &str = "l1_integrated";
    pub const L1_INTEGRATED_SCALED: &str = "l1_integrated_scaled";
    pub const L1_MU_INTEGRATED: &str = "l1_mu_integrated";
    pub const L1_MU_INTEGRATED_SCALED: &str = "l1_mu_integrated_scaled";
    pub const L1_INSTANT: &str = "l1_instant";
    pub const MARGINAL_H0: &str = "marginal_h0";
    pub const MARGINAL_H0_SCALED: &str = "marginal_h0_scaled";
    pub const PERP_H0: &str = "perp_h0";
    pub const PERP_L1: &str = "perp_l1";
    pub const FULL_H0: &str = "full_h0";
    pub const FULL_H1: &str = "full_h1";
    pub const MU_WEIGHTED: [&str; 3] = ["mu_weighted_0", "mu_weighted_1", "mu_weighted_2"];
    pub const MU_MARGINAL_H0: &str = "mu_marginal_h0";
    pub const D2: &str = "d2";
    pub const D4: &str = "d4";
    pub const M2: &str = "m2";
    pub const M4: &str = "m4";
    pub const NONLINEARITY_ERROR: &str = "nonlinearity_error";
    pub const MACRO_ERROR: &str = "macro_error";
    pub const D2_RATIO: &str = "d2_ratio";
    pub const D4_RATIO: &str = "d4_ratio";
    pub const ERROR_RATIO: &str = "error_ratio";
    pub const EQUICONTINUITY_RATIO: &str = "equicontinuity_ratio";
    pub const CLOSURE_OFFSET: &str = "closure_offset";
    pub const FRAME_MEAN: &str = "frame_mean";
}

/// Names of the inequality suites tallied at the sample times.
pub mod suite {
    pub const CSISZAR_KULLBACK: &str = "csiszar_kullback";
    pub const SANDWICH: &str = "half_entropy_sandwich";
    pub const LOG_SOBOLEV: &str = "log_sobolev";
    pub const GAUSSIAN_POINCARE: &str = "gaussian_poincare";
    pub const P_NORM: &str = "p_inequality_norm";
    pub const P_MOMENT: &str = "p_inequality_moment";
    pub const ENTROPY_FINITE: &str = "entropy_finite";
    pub const EQUICONTINUITY: &str = "equicontinuity";
    pub const BAR_NU_GROWTH: &str = "bar_nu_growth";
    pub const BAR_NU_W_DERIVATIVE: &str = "bar_nu_w_derivative_l1";
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteTally {
    pub checked: usize,
    pub violations: usize,
    /// Largest lhs/rhs seen (1 is the bound itself).
    pub worst_ratio: f64,
}

impl SuiteTally {
    pub fn record(&mut self, lhs: f64, rhs: f64, holds: bool) {
        self.checked += 1;
        if !holds {
            self.violations += 1;
        }
        // a held check between round-off sized quantities says nothing about tightness
        let r = if holds && lhs <= ROUND_OFF {
            0.0
        } else if rhs > 0.0 {
            lhs / rhs
        } else {
            f64::INFINITY
        };
        self.worst_ratio = self.worst_ratio.max(r);
    }

    pub fn merge(&mut self, other: &SuiteTally) {
        self.checked += other.checked;
        self.violations += other.violations;
        self.worst_ratio = self.worst_ratio.max(other.worst_ratio);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: f64,
    pub metrics: Vec<(String, f64)>,
    /// Metrics whose value is unreliable at this time (diverged weighted norm).
    pub flagged: Vec<String>,
}

impl SampleRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub t: f64,
    pub x: f64,
    pub name: String,
    pub value: f64,
    pub flag: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTelemetry {
    pub steps: usize,
    pub min_dt: f64,
    pub max_substeps: usize,
    pub clamped: usize,
    pub max_mass_defect: f64,
    pub max_recentre: f64,
    pub max_residual_mean: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { reason: String },
}

/// ν and the frame at the cross-check time.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub eps: f64,
    pub nu: DensityField,
    pub voltage: Vec<f64>,
    pub adaptation: Vec<f64>,
    pub theta: Vec<f64>,
    pub mass_defect: f64,
    pub clamped: usize,
}

#[derive(Clone, Debug)]
pub struct EpsRun {
    pub eps: f64,
    pub status: RunStatus,
    pub samples: Vec<SampleRecord>,
    pub nodes: Vec<NodeRecord>,
    pub suites: BTreeMap<String, SuiteTally>,
    pub telemetry: RunTelemetry,
    pub m1: f64,
    pub twin: Option<TwinMonitor>,
    pub snapshot: Option<Snapshot>,
}

impl EpsRun {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// sup over the sample times of one metric.
    pub fn sup(&self, name: &str) -> Option<f64> {
        self.samples.iter().filter_map(|s| s.get(name)).reduce(f64::max)
    }
}

/// Shared, read-only inputs of one run.
struct Context<'a> {
    config: &'a RunConfig,
    model: &'a Model,
    prep: &'a Prepared,
    eps: f64,
    m1: f64,
    kappa: f64,
    m_eps: WeightSpec,
    bar_m: WeightSpec,
    m_minus: WeightSpec,
    bar_m_minus: WeightSpec,
    /// Discrete Maxwellian M_ρ₀ per node on the rescaled v-axis.
    maxwellians: Vec<Vec<f64>>,
}

/// Per-node, per-step μ-frame data shared by the step and sample evaluations.
struct MuFrame {
    grid: PhaseGrid,
    mu: Vec<f64>,
    target: Vec<f64>,
    /// Absolute (V^ε, W^ε) of the local origin.
    origin: (f64, f64),
    limit_voltage: f64,
    bar_mu: Vec<f64>,
}

impl Context<'_> {
    fn mu_frame(&self, st: &CoupledState, limit: &LimitState, ix: usize) -> Result<MuFrame> {
        let g = self.prep.grid;
        let k = st.contraction();
        let th = crate::phase_space::theta(st.t, self.model.rho0()[ix], self.eps);
        let grid = PhaseGrid::new(g.nv(), th * g.v.half_width(), g.nw(), g.w.half_width() / k)?;
        let mu: Vec<f64> = st.comoving().slice(ix).iter().map(|x| x * k / th).collect();
        let (ve, we) = (st.frame.voltage[ix], st.frame.adaptation[ix]);
        let local = LimitState {
            voltage: vec![limit.voltage[ix]],
            adaptation: vec![limit.adaptation[ix]],
            shift: vec![limit.shift[ix] - we],
            t: st.t,
        };
        let bar_mu = evolve_bar_mu(&local, self.model.adaptation.b, &self.prep.bar_mu0[ix..=ix], &g.w, &grid.w)?
            .pop()
            .expect("one node");
        let target = compose_asymptotic_profile(
            &[limit.voltage[ix] - ve],
            std::slice::from_ref(&bar_mu),
            &[th],
            &self.model.rho0()[ix..=ix],
            grid,
            st.t,
        )?
        .into_values();
        Ok(MuFrame { grid, mu, target, origin: (ve, we), limit_voltage: limit.voltage[ix], bar_mu })
    }

    /// Instantaneous ‖ν − M⊗ν̄‖₁ and ‖μ^ε − μ‖₁ per node.
    fn step_errors(&self, st: &CoupledState, limit: &LimitState) -> Result<Vec<(f64, f64)>> {
        let g = self.prep.grid;
        (0..self.model.nx())
            .into_par_iter()
            .map(|ix| {
                let f = st.comoving().slice(ix);
                let m = &self.maxwellians[ix];
                let mut acc = 0.0;
                for (j, row) in f.chunks(g.nw()).enumerate() {
                    for (x, b) in row.iter().zip(&self.prep.bar_nu0) {
                        acc += (x - m[j] * b).abs();
                    }
                }
                let mf = self.mu_frame(st, limit, ix)?;
                Ok((acc * g.cell_area(), l1(&mf.grid, &mf.mu, &mf.target)))
            })
            .collect()
    }
}

const ENTROPY_FLOOR: f64 = 1e-12;
const ROUND_OFF: f64 = 1e-12;
const SQUARED_NORM_FLOOR: f64 = 1e-24;

struct NodeEval {
    values: Vec<(&'static str, f64)>,
    flagged: Vec<&'static str>,
    diagnostics: Vec<(&'static str, f64, &'static str)>,
    suites: Vec<(&'static str, SuiteTally)>,
}

fn tally(lhs: f64, rhs: f64, holds: bool) -> SuiteTally {
    let mut t = SuiteTally::default();
    t.record(lhs, rhs, holds);
    t
}

impl Context<'_> {
    fn evaluate_node(&self, st: &CoupledState, limit: &LimitState, ix: usize) -> Result<NodeEval> {
        let eps = self.eps;
        let t = st.t;
        let k = st.contraction();
        let rho = self.model.rho0()[ix];
        let th = crate::phase_space::theta(t, rho, eps);
        let cg = self.prep.grid;
        let pg = st.physical_grid();
        let tol = self.config.weights.inequality_tolerance;
        let f = st.comoving().slice(ix);
        let nu: Vec<f64> = f.iter().map(|x| x * k).collect();
        let m = &self.maxwellians[ix];
        let gm = slice_w_marginal(&cg, f);
        let bar_eps: Vec<f64> = gm.iter().map(|x| x * k).collect();
        let bar_lim: Vec<f64> = self.prep.bar_nu0.iter().map(|x| x * k).collect();
        let product = |bar: &[f64]| -> Vec<f64> { m.iter().flat_map(|a| bar.iter().map(move |b| a * b)).collect() };
        let pi_eps = product(&bar_eps);
        let pi_lim = product(&bar_lim);
        let perp: Vec<f64> = nu.iter().zip(&pi_eps).map(|(a, b)| a - b).collect();
        let diff_lim: Vec<f64> = nu.iter().zip(&pi_lim).map(|(a, b)| a - b).collect();

        let mut values = Vec::new();
        let mut flagged = Vec::new();
        let mut diagnostics = Vec::new();
        let mut suites = Vec::new();

        let l1_inst = l1(&pg, &nu, &pi_lim);
        values.push((metric::L1_INSTANT, l1_inst));
        values.push((metric::PERP_L1, l1(&pg, &nu, &pi_eps)));
        let perp_h0 = weighted_norm(&pg, &perp, 0, &self.m_eps, rho)?;
        let full_h0 = weighted_norm(&pg, &diff_lim, 0, &self.m_eps, rho)?;
        let full_h1 = weighted_norm(&pg, &diff_lim, 1, &self.m_eps, rho)?;
        let bar_diff: Vec<f64> = bar_eps.iter().zip(&bar_lim).map(|(a, b)| a - b).collect();
        let marginal = marginal_weighted_norm(&pg.w, &bar_diff, 0, &self.bar_m)?;
        for (name, n) in [
            (metric::PERP_H0, perp_h0),
            (metric::FULL_H0, full_h0),
            (metric::FULL_H1, full_h1),
            (metric::MARGINAL_H0, marginal),
        ] {
            values.push((name, n.value));
            if n.diverged {
                flagged.push(name);
            }
        }
        values.push((metric::MARGINAL_H0_SCALED, marginal.value / k));

        // μ-frame weighted errors against the concentrated profile
        let mf = self.mu_frame(st, limit, ix)?;
        let (v_abs0, w_abs0) = mf.origin;
        let mut sums = [0.0; 3];
        for j in 0..mf.grid.nv() {
            let v_abs = v_abs0 + mf.grid.v.node(j);
            let dv = v_abs - mf.limit_voltage;
            for kk in 0..mf.grid.nw() {
                let i = j * mf.grid.nw() + kk;
                let d = mf.mu[i] - mf.target[i];
                if d == 0.0 {
                    continue;
                }
                let wgt = self.m_minus.ln_eval(rho, v_abs, w_abs0 + mf.grid.w.node(kk)).exp();
                for (p, s) in sums.iter_mut().enumerate() {
                    *s += (dv.powi(p as i32) * d).powi(2) * wgt;
                }
            }
        }
        for (p, s) in sums.iter().enumerate() {
            values.push((metric::MU_WEIGHTED[p], (s * mf.grid.cell_area()).sqrt()));
        }
        let mu_bar = slice_w_marginal(&mf.grid, &mf.mu);
        let mut acc = 0.0;
        for (kk, (a, b)) in mu_bar.iter().zip(&mf.bar_mu).enumerate() {
            acc += (a - b).powi(2) * self.bar_m_minus.ln_eval(1.0, 0.0, w_abs0 + mf.grid.w.node(kk)).exp();
        }
        values.push((metric::MU_MARGINAL_H0, (acc * mf.grid.dw()).sqrt()));

        // moments, relative energy and the nonlinearity error
        let vprof = slice_v_marginal(&cg, f);
        let d2 = th.powi(2) * centered_v_moment(&cg.v, &vprof, 0.0, 2);
        let d4 = th.powi(4) * centered_v_moment(&cg.v, &vprof, 0.0, 4);
        let (ve, we) = (st.frame.voltage[ix], st.frame.adaptation[ix]);
        let (mut m2, mut m4) = (0.0, 0.0);
        for j in 0..pg.nv() {
            let va = ve + th * pg.v.node(j);
            for kk in 0..pg.nw() {
                let wa = we + pg.w.node(kk);
                let r2 = va * va + wa * wa;
                let x = nu[j * pg.nw() + kk];
                m2 += r2 * x;
                m4 += r2 * r2 * x;
            }
        }
        let err = self.model.frame_nonlinearity_error(&vprof, &cg, ve, th).abs();
        let m_star = self.model.m_star();
        values.push((metric::D2, d2));
        values.push((metric::D4, d4));
        values.push((metric::M2, m2 * pg.cell_area()));
        values.push((metric::M4, m4 * pg.cell_area()));
        values.push((metric::NONLINEARITY_ERROR, err));
        values.push((metric::D2_RATIO, d2 / ((-2.0 * m_star * t / eps).exp() + eps)));
        values.push((metric::D4_RATIO, d4 / ((-4.0 * m_star * t / eps).exp() + eps * eps)));
        values.push((metric::ERROR_RATIO, err / ((-2.0 * m_star * t / eps).exp() + eps)));
        values.push((
            metric::MACRO_ERROR,
            (ve - limit.voltage[ix]).abs().max((we - limit.adaptation[ix]).abs()),
        ));
        let (cv, cw) = st.closure_offset[ix];
        values.push((metric::CLOSURE_OFFSET, cv.abs().max(cw.abs())));

        // entropy functionals and the inequality suites
        let fe = free_energy(&pg, &nu, rho)?;
        let re = relative_entropy(&pg, &nu, rho)?;
        let fi = fisher_information(&pg, &nu, rho);
        let h_lim = half_entropy(&nu, &pi_lim, pg.cell_area());
        diagnostics.push(("free_energy", fe, ""));
        diagnostics.push(("relative_entropy", re, ""));
        diagnostics.push(("fisher_information", fi.value, if fi.unreliable { "unreliable" } else { "" }));
        diagnostics.push(("half_entropy_to_limit", h_lim, ""));
        diagnostics.push((metric::L1_INSTANT, l1_inst, ""));
        diagnostics.push((metric::PERP_H0, perp_h0.value, if perp_h0.diverged { "diverged" } else { "" }));
        diagnostics.push((metric::MARGINAL_H0, marginal.value, if marginal.diverged { "diverged" } else { "" }));
        diagnostics.push((metric::D2, d2, ""));
        diagnostics.push((metric::NONLINEARITY_ERROR, err, ""));
        let finite = fe.is_finite() && re.is_finite() && fi.value.is_finite() && h_lim.is_finite();
        suites.push((suite::ENTROPY_FINITE, tally(0.0, 1.0, finite)));

        let (ck_ok, _) = csiszar_kullback(&pg, &nu, rho)?;
        let d = l1(&pg, &nu, &pi_eps);
        suites.push((suite::CSISZAR_KULLBACK, tally(d * d, 2.0 * re, ck_ok)));
        for g in [&pi_eps, &pi_lim] {
            let s = ck_sandwich(&nu, g, pg.cell_area());
            suites.push((suite::SANDWICH, tally(s.l1 * s.l1 / 8.0, s.half_entropy, s.lower_ok && s.upper_ok)));
        }
        // Exact products give round-off sized functionals on both sides; below these
        // floors the comparison carries no information.
        if !fi.unreliable {
            let lhs = 2.0 * re;
            let floored = lhs <= ENTROPY_FLOOR;
            let holds = lhs <= fi.value * (1.0 + tol) || floored;
            suites.push((suite::LOG_SOBOLEV, tally(if floored { 0.0 } else { lhs }, fi.value, holds)));
            let gp = gaussian_poincare(&pg, &perp, rho, self.kappa, tol)?;
            let floored = gp.lhs <= SQUARED_NORM_FLOOR;
            suites.push((suite::GAUSSIAN_POINCARE, tally(if floored { 0.0 } else { gp.lhs }, gp.rhs, gp.holds || floored)));
        }
        let (p1, p2) = p_inequalities(&pg, &nu, rho, self.kappa, tol)?;
        suites.push((suite::P_NORM, tally(p1.lhs, p1.rhs, p1.holds)));
        suites.push((suite::P_MOMENT, tally(p2.lhs, p2.rhs, p2.holds)));

        // translation modulus against C(|s| + |s|^½), s = e^{bt}w₀ = n·dw̃
        let max_cells = ((self.config.experiment.max_shift / pg.dw()).floor() as isize).min(cg.nw() as isize - 1);
        let mut eq = SuiteTally::default();
        for n in (1..=max_cells).flat_map(|n| [n, -n]) {
            let shifted = translate_w(&cg, f, n);
            let modulus = l1(&cg, f, &shifted);
            let bound = equicontinuity_bound(self.m1, self.model.adaptation.b, n as f64 * cg.dw());
            eq.record(modulus, bound, modulus <= bound);
        }
        values.push((metric::EQUICONTINUITY_RATIO, eq.worst_ratio));
        suites.push((suite::EQUICONTINUITY, eq));

        Ok(NodeEval { values, flagged, diagnostics, suites })
    }
}

/// Checks on the limit marginal alone: the H^k(m̄) growth bound for k ∈ {0, 1} and the
/// constancy of ‖w∂wν̄‖₁, both on a fixed fine axis so the profile narrows across it.
fn limit_marginal_checks(ctx: &Context, t: f64, fine: &crate::phase_space::Axis, tallies: &mut BTreeMap<String, SuiteTally>) -> Result<()> {
    let b = ctx.model.adaptation.b;
    let profile = &ctx.config.experiment.bar_nu0;
    let (v0, _) = crate::macro_solver::evolve_bar_nu(profile, b, 0.0, fine)?;
    let (vt, _) = crate::macro_solver::evolve_bar_nu(profile, b, t, fine)?;
    let tol = ctx.config.weights.inequality_tolerance;
    for kd in 0..=1usize {
        let n0 = marginal_weighted_norm(fine, &v0, kd, &ctx.bar_m)?.value;
        let nt = marginal_weighted_norm(fine, &vt, kd, &ctx.bar_m)?.value;
        let bound = ((kd as f64 + 0.5) * b * t).exp() * n0;
        tallies.entry(suite::BAR_NU_GROWTH.into()).or_default().record(nt, bound, nt <= bound * (1.0 + tol));
    }
    let wd = |p: &[f64]| -> f64 {
        let h = fine.spacing();
        (1..p.len() - 1).map(|k| (fine.node(k) * (p[k + 1] - p[k - 1]) / (2.0 * h)).abs()).sum::<f64>() * h
    };
    let (a, c) = (wd(&v0), wd(&vt));
    let rel = (c - a).abs() / a;
    tallies.entry(suite::BAR_NU_W_DERIVATIVE.into()).or_default().record(rel, tol, rel <= tol);
    Ok(())
}

/// Runs one ε and never panics on solver failure: the run is returned with what was
/// recorded so far and the reason.
pub fn run_epsilon(config: &RunConfig, model: &Model, prep: &Prepared, eps: f64, twin: bool) -> EpsRun {
    let start = std::time::Instant::now();
    let mut out = EpsRun {
        eps,
        status: RunStatus::Completed,
        samples: Vec::new(),
        nodes: Vec::new(),
        suites: BTreeMap::new(),
        telemetry: RunTelemetry { min_dt: f64::INFINITY, ..Default::default() },
        m1: 0.0,
        twin: None,
        snapshot: None,
    };
    if let Err(e) = run_inner(config, model, prep, eps, twin, &mut out) {
        warn!("eps = {eps}: run aborted: {e}");
        out.status = RunStatus::Failed { reason: e.to_string() };
    }
    out.telemetry.wall_seconds = start.elapsed().as_secs_f64();
    if out.telemetry.min_dt == f64::INFINITY {
        out.telemetry.min_dt = 0.0;
    }
    out
}

fn run_inner(config: &RunConfig, model: &Model, prep: &Prepared, eps: f64, twin: bool, out: &mut EpsRun) -> Result<()> {
    let kappa = config.kappa();
    let cg = prep.grid;
    let shifts: Vec<f64> = [1.0, 2.0, 4.0].iter().map(|n| n * cg.dw()).collect();
    let m1 = initial_lipschitz_m1(&prep.nu0, &[0.01, 0.02, 0.05], &shifts)?;
    out.m1 = m1;
    let ctx = Context {
        config,
        model,
        prep,
        eps,
        m1,
        kappa,
        m_eps: WeightSpec::new(kappa, WeightVariant::MEps)?,
        bar_m: WeightSpec::new(kappa, WeightVariant::BarM)?,
        m_minus: WeightSpec::new(kappa, WeightVariant::MMinus)?,
        bar_m_minus: WeightSpec::new(kappa, WeightVariant::BarMMinus)?,
        maxwellians: model.rho0().iter().map(|&r| Ok(maxwellian(&cg.v, r)?.values)).collect::<Result<_>>()?,
    };
    let e = &config.experiment;
    let b = model.adaptation.b;
    let nx = model.nx();
    let fine = crate::phase_space::Axis::new(4096, cg.w.half_width())?;
    let solver = RescaledSolver::new(model, config.solver.scheme, config.solver.cfl_safety)?;
    let limit_solver = LimitSolver::new(model, 1e3);
    let mut st = CoupledState::new(prep.nu0.clone(), prep.frame0.clone(), eps, b)?;
    let mut limit = prep.limit0.clone();
    let rho_max = model.rho0().iter().copied().fold(0.0, f64::max);

    let times = e.sample_times();
    let snapshot_t = e.cross_check.filter(|c| c.eps == eps).map(|c| c.t);
    let mut stops: Vec<f64> = times.clone();
    if let Some(ts) = snapshot_t {
        stops.push(ts);
    }
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut integ = vec![(0.0, 0.0); nx];
    let mut prev = ctx.step_errors(&st, &limit)?;
    let mut twin_samples: Vec<Vec<TwinSample>> = vec![Vec::new(); nx];
    let record_twin = |st: &CoupledState, buf: &mut Vec<Vec<TwinSample>>| -> Result<()> {
        let nu = st.nu();
        let pg = *nu.grid();
        let k = st.contraction();
        let bar: Vec<f64> = prep.bar_nu0.iter().map(|x| x * k).collect();
        let th = st.theta(model);
        let rows: Vec<TwinSample> = (0..nx)
            .into_par_iter()
            .map(|ix| {
                let frame = TwinFrame {
                    t: st.t,
                    eps,
                    voltage: st.frame.voltage[ix],
                    theta: th.values[ix],
                    rho: model.rho0()[ix],
                    psi_rho: model.psi_rho0()[ix],
                };
                twin_sample(model, &pg, nu.slice(ix), &bar, frame)
            })
            .collect::<Result<_>>()?;
        for (b, r) in buf.iter_mut().zip(rows) {
            b.push(r);
        }
        Ok(())
    };
    if twin {
        record_twin(&st, &mut twin_samples)?;
    }
    let sample = |st: &CoupledState, limit: &LimitState, integ: &[(f64, f64)], out: &mut EpsRun| -> Result<()> {
        let evals: Vec<NodeEval> =
            (0..nx).into_par_iter().map(|ix| ctx.evaluate_node(st, limit, ix)).collect::<Result<_>>()?;
        let k = st.contraction();
        let mut agg: Vec<(String, f64)> = Vec::new();
        let mut flagged: Vec<String> = Vec::new();
        let mut put = |name: &str, v: f64| match agg.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = slot.1.max(v),
            None => agg.push((name.to_string(), v)),
        };
        for (ix, ev) in evals.iter().enumerate() {
            put(metric::L1_INTEGRATED, integ[ix].0);
            put(metric::L1_INTEGRATED_SCALED, integ[ix].0 / k);
            put(metric::L1_MU_INTEGRATED, integ[ix].1);
            put(metric::L1_MU_INTEGRATED_SCALED, integ[ix].1 / k);
            for (n, v) in &ev.values {
                put(n, *v);
            }
            for n in &ev.flagged {
                if !flagged.iter().any(|f| f == n) {
                    flagged.push(n.to_string());
                }
            }
            for (n, t) in &ev.suites {
                out.suites.entry(n.to_string()).or_default().merge(t);
            }
            if config.output.diagnostics_csv {
                let x = model.spatial().nodes()[ix];
                for (n, v, f) in &ev.diagnostics {
                    out.nodes.push(NodeRecord { t: st.t, x, name: n.to_string(), value: *v, flag: f.to_string() });
                }
            }
        }
        let fm = st.frame_means().iter().fold(0.0_f64, |a, (v, w)| a.max(v.abs()).max(w.abs()));
        agg.push((metric::FRAME_MEAN.into(), fm));
        limit_marginal_checks(&ctx, st.t, &fine, &mut out.suites)?;
        out.samples.push(SampleRecord { t: st.t, metrics: agg, flagged });
        Ok(())
    };
    sample(&st, &limit, &integ, out)?;

    let mut next = 1;
    while next < stops.len() {
        let target = stops[next];
        let remaining = target - st.t;
        let mut h = layer_resolving_step(st.t, config.solver.dt_max, eps, rho_max, config.solver.layer_tolerance);
        if h >= remaining || remaining - h < 1e-3 * h {
            h = remaining;
        }
        let tel = solver.step(&mut st, h)?;
        limit = limit_solver.step(&limit, h)?;
        let arrived = h == remaining;
        if arrived {
            st.t = target;
            limit.t = target;
        }
        out.telemetry.steps += 1;
        out.telemetry.min_dt = out.telemetry.min_dt.min(h);
        out.telemetry.max_substeps = out.telemetry.max_substeps.max(tel.substeps);
        out.telemetry.clamped += tel.clamped;
        out.telemetry.max_mass_defect = out.telemetry.max_mass_defect.max(tel.mass_defect);
        out.telemetry.max_recentre = out.telemetry.max_recentre.max(tel.recentre);
        out.telemetry.max_residual_mean = out.telemetry.max_residual_mean.max(tel.residual_mean);

        let now = ctx.step_errors(&st, &limit)?;
        for ix in 0..nx {
            integ[ix].0 += 0.5 * h * (prev[ix].0 + now[ix].0);
            integ[ix].1 += 0.5 * h * (prev[ix].1 + now[ix].1);
        }
        prev = now;
        if twin {
            record_twin(&st, &mut twin_samples)?;
        }
        if arrived {
            if snapshot_t == Some(target) {
                out.snapshot = Some(Snapshot {
                    eps,
                    nu: st.nu(),
                    voltage: st.frame.voltage.clone(),
                    adaptation: st.frame.adaptation.clone(),
                    theta: st.theta(model).values,
                    mass_defect: out.telemetry.max_mass_defect,
                    clamped: out.telemetry.clamped,
                });
            }
            if times.iter().any(|&s| s == target) {
                sample(&st, &limit, &integ, out)?;
            }
            next += 1;
        }
    }
    if twin {
        let tol = e.twin_tolerance;
        let mut agg = TwinMonitor { worst_excess: f64::NEG_INFINITY, integrated_ok: true, ..Default::default() };
        for s in &twin_samples {
            let m = monitor_twin(s, tol);
            agg.checked += m.checked;
            agg.violations += m.violations;
            agg.worst_excess = agg.worst_excess.max(m.worst_excess);
            agg.integrated_ok &= m.integrated_ok;
        }
        out.twin = Some(agg);
    }
    info!(
        "eps = {eps}: {} steps, sup scaled L1 {:.3e}, sup scaled marginal {:.3e}",
        out.telemetry.steps,
        out.sup(metric::L1_INTEGRATED_SCALED).unwrap_or(f64::NAN),
        out.sup(metric::MARGINAL_H0_SCALED).unwrap_or(f64::NAN)
    );
    Ok(())
}
