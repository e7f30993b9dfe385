//! The limit system: voltage V with its nonlocal coupling, the adaptation mean W, and
//! the transported adaptation profiles μ̄ (centred at W) and ν̄ (centred at 0).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Error, Result};
use crate::model::Model;
use crate::phase_space::interp::linear;
use crate::phase_space::Axis;

/// Initial adaptation profile, centred at zero and of unit mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WProfile {
    Gaussian { variance: f64 },
    /// (4 / 3R) cos⁴(πw / 2R) on [−R, R].
    CosineBump { radius: f64 },
    /// Samples on a uniform axis, linearly interpolated and zero outside.
    Samples { half_width: f64, values: Vec<f64> },
}

impl WProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            WProfile::Gaussian { variance } => *variance > 0.0,
            WProfile::CosineBump { radius } => *radius > 0.0,
            WProfile::Samples { half_width, values } => {
                *half_width > 0.0 && values.len() >= 2 && values.iter().all(|x| *x >= 0.0 && x.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("invalid adaptation profile {self:?}")))
        }
    }

    pub fn eval(&self, w: f64) -> f64 {
        match self {
            WProfile::Gaussian { variance } => {
                (-0.5 * w * w / variance).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
            }
            WProfile::CosineBump { radius } => {
                if w.abs() >= *radius {
                    0.0
                } else {
                    let c = (std::f64::consts::PI * w / (2.0 * radius)).cos();
                    4.0 / (3.0 * radius) * c.powi(4)
                }
            }
            WProfile::Samples { half_width, values } => {
                let axis = Axis::new(values.len(), *half_width).expect("validated");
                linear(&axis, values, w)
            }
        }
    }

    /// ∫|p'| dw, exact where a closed form exists.
    pub fn derivative_l1(&self) -> f64 {
        match self {
            WProfile::Gaussian { .. } => 2.0 * self.eval(0.0),
            WProfile::CosineBump { radius } => 2.0 * 4.0 / (3.0 * radius),
            WProfile::Samples { values, .. } => {
                let mut s: f64 = values.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
                s += values[0].abs() + values[values.len() - 1].abs();
                s
            }
        }
    }

    /// Samples on `axis` renormalized to unit discrete mass, plus the raw mass.
    pub fn sample(&self, axis: &Axis) -> Result<(Vec<f64>, f64)> {
        self.validate()?;
        let mut v: Vec<f64> = axis.nodes().iter().map(|&w| self.eval(w)).collect();
        let raw = v.iter().sum::<f64>() * axis.spacing();
        if !(raw > 0.0) {
            return Err(domain("adaptation profile has no mass on the grid"));
        }
        v.iter_mut().for_each(|x| *x /= raw);
        Ok((v, raw))
    }
}

/// ν̄(t, w) = e^{bt} ν̄₀(e^{bt} w) on `axis`; returns the values and the mass missing
/// from the box.
pub fn evolve_bar_nu(profile: &WProfile, b: f64, t: f64, axis: &Axis) -> Result<(Vec<f64>, f64)> {
    if t < 0.0 {
        return Err(domain("evolve_bar_nu needs t >= 0"));
    }
    let k = (b * t).exp();
    let v: Vec<f64> = axis.nodes().iter().map(|&w| k * profile.eval(k * w)).collect();
    let defect = 1.0 - v.iter().sum::<f64>() * axis.spacing();
    Ok((v, defect))
}

/// Same as [`evolve_bar_nu`] for sampled initial data on `axis0`, evaluated on `axis`.
pub fn evolve_bar_nu_samples(values0: &[f64], axis0: &Axis, b: f64, t: f64, axis: &Axis) -> Vec<f64> {
    let k = (b * t).exp();
    axis.nodes().iter().map(|&w| k * linear(axis0, values0, k * w)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitState {
    pub voltage: Vec<f64>,
    pub adaptation: Vec<f64>,
    /// Characteristic shift S with w(t) = e^{−bt} w₀ + S(t).
    pub shift: Vec<f64>,
    pub t: f64,
}

impl LimitState {
    pub fn new(voltage: Vec<f64>, adaptation: Vec<f64>) -> Result<Self> {
        if voltage.len() != adaptation.len() {
            return Err(shape("V and W differ in length"));
        }
        let n = voltage.len();
        Ok(Self { voltage, adaptation, shift: vec![0.0; n], t: 0.0 })
    }
}

/// Integrator for the limit system with an initial μ̄₀ given as samples on `axis`.
#[derive(Clone, Debug)]
pub struct LimitSolver<'m> {
    model: &'m Model,
    /// Blow-up guard on |V|.
    pub v_limit: f64,
}

impl<'m> LimitSolver<'m> {
    pub fn new(model: &'m Model, v_limit: f64) -> Self {
        Self { model, v_limit }
    }

    fn rate(&self, v: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let l = self.model.nonlocal_operator(v)?;
        let p = &self.model.adaptation;
        let dv = (0..v.len()).map(|i| self.model.drift.eval(v[i]) - w[i] - l[i]).collect();
        let dw = (0..v.len()).map(|i| p.a * v[i] + p.c - p.b * w[i]).collect();
        Ok((dv, dw))
    }

    /// One RK4 step of (V, W) and the matching update of the characteristic shift.
    pub fn step(&self, s: &LimitState, dt: f64) -> Result<LimitState> {
        if !(dt > 0.0) {
            return Err(domain("time step must be positive"));
        }
        let n = s.voltage.len();
        if n != self.model.nx() {
            return Err(shape("limit state and model disagree on nx"));
        }
        let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
        let (v0, w0) = (&s.voltage, &s.adaptation);
        let (k1v, k1w) = self.rate(v0, w0)?;
        let (k2v, k2w) = self.rate(&axpy(v0, &k1v, 0.5 * dt), &axpy(w0, &k1w, 0.5 * dt))?;
        let (k3v, k3w) = self.rate(&axpy(v0, &k2v, 0.5 * dt), &axpy(w0, &k2w, 0.5 * dt))?;
        let (k4v, k4w) = self.rate(&axpy(v0, &k3v, dt), &axpy(w0, &k3w, dt))?;
        let comb = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
            (0..n).map(|i| x[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i])).collect()
        };
        let v1 = comb(v0, &k1v, &k2v, &k3v, &k4v);
        let w1 = comb(w0, &k1w, &k2w, &k3w, &k4w);
        if let Some(i) = v1.iter().position(|v| !(v.abs() <= self.v_limit)) {
            return Err(Error::Solver(format!(
                "limit voltage blew up at node {i}: |V| = {} exceeds {}",
                v1[i].abs(),
                self.v_limit
            )));
        }
        // S(t+dt) = e^{−b dt} S(t) + ∫ e^{−b(t+dt−s)} (aV(s) + c) ds, by Simpson's rule with
        // the cubic Hermite midpoint of V.
        let p = &self.model.adaptation;
        let (dv1, _) = self.rate(&v1, &w1)?;
        let decay = (-p.b * dt).exp();
        let half = (-p.b * 0.5 * dt).exp();
        let shift = (0..n)
            .map(|i| {
                let vm = 0.5 * (v0[i] + v1[i]) + dt * (k1v[i] - dv1[i]) / 8.0;
                let f0 = decay * (p.a * v0[i] + p.c);
                let fm = half * (p.a * vm + p.c);
                let f1 = p.a * v1[i] + p.c;
                decay * s.shift[i] + dt / 6.0 * (f0 + 4.0 * fm + f1)
            })
            .collect();
        Ok(LimitState { voltage: v1, adaptation: w1, shift, t: s.t + dt })
    }

    /// Runs to `t_end` with steps of at most `dt`, returning every state including the first.
    pub fn trajectory(&self, s0: &LimitState, dt: f64, t_end: f64) -> Result<Vec<LimitState>> {
        let n = ((t_end - s0.t) / dt).ceil().max(0.0) as usize;
        let mut out = Vec::with_capacity(n + 1);
        out.push(s0.clone());
        if n == 0 {
            return Ok(out);
        }
        let h = (t_end - s0.t) / n as f64;
        for _ in 0..n {
            let next = self.step(out.last().expect("non-empty"), h)?;
            out.push(next);
        }
        Ok(out)
    }
}

/// μ̄(t, w) = e^{bt} μ̄₀(e^{bt}(w − S)) per node on `axis`, with μ̄₀ sampled on `axis0`.
pub fn evolve_bar_mu(
    state: &LimitState,
    b: f64,
    bar_mu0: &[Vec<f64>],
    axis0: &Axis,
    axis: &Axis,
) -> Result<Vec<Vec<f64>>> {
    if bar_mu0.len() != state.shift.len() {
        return Err(shape("initial profiles and state disagree on nx"));
    }
    let k = (b * state.t).exp();
    Ok(bar_mu0
        .iter()
        .zip(&state.shift)
        .map(|(p0, s)| axis.nodes().iter().map(|&w| k * linear(axis0, p0, k * (w - s))).collect())
        .collect())
}

/// Writes `t, x, V, W` rows for a trajectory.
pub fn export_trajectory_csv(path: &Path, model: &Model, states: &[LimitState]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "V", "W"])?;
    for s in states {
        for (ix, x) in model.spatial().nodes().iter().enumerate() {
            w.write_record(&[
                format!("{}", s.t),
                format!("{x}"),
                format!("{}", s.voltage[ix]),
                format!("{}", s.adaptation[ix]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
