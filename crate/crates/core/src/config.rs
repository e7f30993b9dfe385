//! Run configuration: one JSON document with sections model, grids, solver, weights,
//! experiment and output. Every key has a default; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{WeightSpec, WeightVariant};
use crate::error::{Error, Result};
use crate::kinetic::TransportScheme;
use crate::macro_solver::WProfile;
use crate::model::{AdaptationParams, DensityProfile, DriftSpec, Kernel, KernelSpec, Model, SpatialDensity};
use crate::phase_space::{PhaseGrid, SpatialGrid};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub drift: DriftSpec,
    pub adaptation: AdaptationParams,
    pub kernel: KernelSpec,
    pub rho0: DensityProfile,
    pub m_star: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            drift: DriftSpec::cubic(),
            adaptation: AdaptationParams { a: 0.25, b: 1.0, c: 0.0 },
            kernel: KernelSpec::default(),
            rho0: DensityProfile::CosineBump { base: 1.125, amplitude: 0.125 },
            m_star: 0.8,
        }
    }
}

/// A (v, w) box: `nv × nw` nodes on [−lv, lv] × [−lw, lw].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub nv: usize,
    pub lv: f64,
    pub nw: usize,
    pub lw: f64,
}

impl BoxSpec {
    pub fn grid(&self) -> Result<PhaseGrid> {
        PhaseGrid::new(self.nv, self.lv, self.nw, self.lw)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    /// Rescaled-frame box.
    pub rescaled: BoxSpec,
    /// Original-variable box of the direct cross-check.
    pub direct: BoxSpec,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 8,
            rescaled: BoxSpec { nv: 256, lv: 8.0, nw: 128, lw: 4.5 },
            direct: BoxSpec { nv: 360, lv: 4.5, nw: 128, lw: 4.5 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub scheme: TransportScheme,
    pub cfl_safety: f64,
    pub dt_max: f64,
    /// Relative θ² change allowed per step inside the initial layer.
    pub layer_tolerance: f64,
    pub direct_dt: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { scheme: TransportScheme::Muscl, cfl_safety: 0.9, dt_max: 0.005, layer_tolerance: 0.05, direct_dt: 0.005 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSection {
    /// Defaults to 1/b.
    pub kappa: Option<f64>,
    /// Defaults to ½(1 − 1/(2bκ)).
    pub alpha_star: Option<f64>,
    /// Relative slack of the functional inequalities.
    pub inequality_tolerance: f64,
}

impl Default for WeightSection {
    fn default() -> Self {
        Self { kappa: None, alpha_star: None, inequality_tolerance: 0.02 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    /// ν₀ = M_{ρ₀} ⊗ ν̄₀.
    WellPrepared,
    /// ν₀ = M_{ρ₀/s} ⊗ ν̄₀ with s = `wide_variance_factor`.
    IllPreparedWide,
    /// ν₀ = ½[M_{ρ₀}(v − d) + M_{ρ₀}(v + d)] ⊗ ν̄₀ with d = `mixture_offset`.
    IllPreparedShifted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossCheck {
    pub eps: f64,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub eps_list: Vec<f64>,
    pub initial_data: InitialData,
    pub horizon: f64,
    pub sample_count: usize,
    pub first_sample: f64,
    /// V₀(x) = voltage_mean + voltage_amplitude·cos 2πx.
    pub voltage_mean: f64,
    pub voltage_amplitude: f64,
    pub adaptation0: f64,
    pub bar_nu0: WProfile,
    pub wide_variance_factor: f64,
    pub mixture_offset: f64,
    /// Offset of the kinetic initial voltage mean from the limit one (the initial macro error).
    pub macro_offset: f64,
    pub seed: u64,
    /// Calibrated envelopes are checked with the constant inflated by (1 + bound_tolerance).
    pub bound_tolerance: f64,
    /// Absolute slack of the relative-entropy rate monitor, about dt_max + dw².
    pub twin_tolerance: f64,
    /// Largest physical w-shift of the translation modulus.
    pub max_shift: f64,
    /// Snapshot written for the direct cross-check; omitted when null.
    pub cross_check: Option<CrossCheck>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            eps_list: vec![0.1, 0.05, 0.025, 0.0125],
            initial_data: InitialData::WellPrepared,
            horizon: 2.0,
            sample_count: 40,
            first_sample: 1e-3,
            voltage_mean: 0.8,
            voltage_amplitude: 0.2,
            adaptation0: 0.0,
            bar_nu0: WProfile::CosineBump { radius: 4.0 },
            wide_variance_factor: 2.0,
            mixture_offset: 1.0,
            macro_offset: 0.0,
            seed: 0,
            bound_tolerance: 1.0,
            twin_tolerance: 0.01,
            max_shift: 1.0,
            cross_check: Some(CrossCheck { eps: 0.1, t: 1.0 }),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.eps_list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(cfg("experiment.eps_list", "every epsilon must lie in (0, 1]"));
        }
        if self.eps_list.windows(2).any(|p| p[1] >= p[0]) {
            return Err(cfg("experiment.eps_list", "epsilons must be strictly decreasing"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(cfg("experiment.horizon", "must be positive"));
        }
        if self.sample_count < 2 {
            return Err(cfg("experiment.sample_count", "need at least 2 sample times"));
        }
        if !(self.first_sample > 0.0 && self.first_sample < self.horizon) {
            return Err(cfg("experiment.first_sample", "must lie in (0, horizon)"));
        }
        if !(self.wide_variance_factor > 0.0) {
            return Err(cfg("experiment.wide_variance_factor", "must be positive"));
        }
        if !(self.bound_tolerance >= 0.0) || !(self.twin_tolerance >= 0.0) {
            return Err(cfg("experiment", "tolerances must be non-negative"));
        }
        if !(self.max_shift > 0.0) {
            return Err(cfg("experiment.max_shift", "must be positive"));
        }
        if let Some(c) = self.cross_check {
            if !(c.t > 0.0 && c.t <= self.horizon) || !self.eps_list.contains(&c.eps) {
                return Err(cfg("experiment.cross_check", "needs an epsilon from eps_list and 0 < t <= horizon"));
            }
        }
        self.bar_nu0.validate().map_err(|e| cfg("experiment.bar_nu0", &e.to_string()))
    }

    /// `sample_count` times: t = 0, then geometric from `first_sample` to the horizon.
    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.sample_count - 1;
        let ratio = (self.horizon / self.first_sample).ln();
        let mut t = vec![0.0];
        t.extend((0..n).map(|i| {
            if i + 1 == n {
                self.horizon
            } else {
                self.first_sample * (ratio * i as f64 / (n - 1).max(1) as f64).exp()
            }
        }));
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Per-node functional values at the sample times.
    pub diagnostics_csv: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "runs".into(), diagnostics_csv: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grids: GridSection,
    pub solver: SolverSection,
    pub weights: WeightSection,
    pub experiment: ExperimentSpec,
    pub output: OutputSection,
}

fn cfg(path: &str, message: &str) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut c: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| cfg(&e.path().to_string(), &e.inner().to_string()))?;
        c.resolve()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Effective config as pretty JSON; parsing it back yields the same config.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fills derived defaults and validates everything.
    pub fn resolve(&mut self) -> Result<()> {
        let b = self.model.adaptation.b;
        self.model.adaptation.validate().map_err(|e| cfg("model.adaptation", &e.to_string()))?;
        self.model.drift.validate().map_err(|e| cfg("model.drift", &e.to_string()))?;
        let kappa = *self.weights.kappa.get_or_insert(1.0 / b);
        WeightSpec::new(kappa, WeightVariant::MEps)
            .and_then(|w| w.check_against_damping(b))
            .map_err(|e| cfg("weights.kappa", &e.to_string()))?;
        let cap = 1.0 - 1.0 / (2.0 * b * kappa);
        let alpha = *self.weights.alpha_star.get_or_insert(0.5 * cap);
        if !(alpha > 0.0 && alpha < cap) {
            return Err(cfg("weights.alpha_star", &format!("must lie in (0, {cap})")));
        }
        if !(self.weights.inequality_tolerance >= 0.0) {
            return Err(cfg("weights.inequality_tolerance", "must be non-negative"));
        }
        if self.grids.nx < 2 {
            return Err(cfg("grids.nx", "need at least 2 spatial nodes"));
        }
        self.grids.rescaled.grid().map_err(|e| cfg("grids.rescaled", &e.to_string()))?;
        self.grids.direct.grid().map_err(|e| cfg("grids.direct", &e.to_string()))?;
        let s = &self.solver;
        if !(s.cfl_safety > 0.0 && s.cfl_safety <= 1.0) {
            return Err(cfg("solver.cfl_safety", "must lie in (0, 1]"));
        }
        if !(s.dt_max > 0.0 && s.direct_dt > 0.0 && s.layer_tolerance > 0.0) {
            return Err(cfg("solver", "dt_max, direct_dt and layer_tolerance must be positive"));
        }
        self.experiment.validate()?;
        self.build_model().map(|_| ())
    }

    pub fn kappa(&self) -> f64 {
        self.weights.kappa.unwrap_or(1.0 / self.model.adaptation.b)
    }

    pub fn alpha_star(&self) -> f64 {
        let b = self.model.adaptation.b;
        self.weights.alpha_star.unwrap_or(0.5 * (1.0 - 1.0 / (2.0 * b * self.kappa())))
    }

    pub fn build_model(&self) -> Result<Model> {
        let m = &self.model;
        let spatial = SpatialGrid::uniform(self.grids.nx).map_err(|e| cfg("grids.nx", &e.to_string()))?;
        let kernel = Kernel::build(&m.kernel, &spatial).map_err(|e| cfg("model.kernel", &e.to_string()))?;
        let rho = SpatialDensity::from_profile(&m.rho0, &spatial, m.m_star)
            .map_err(|e| cfg("model.rho0", &e.to_string()))?;
        Model::new(m.drift.clone(), m.adaptation, kernel, rho, spatial).map_err(|e| cfg("model", &e.to_string()))
    }
}

/// Every key with its default, one per line, for the CLI help text.
pub fn documented_defaults() -> String {
    let v = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut lines = Vec::new();
    flatten("", &v, &mut lines);
    for l in &mut lines {
        if l == "weights.kappa = null" {
            l.push_str(" (1/b)");
        } else if l == "weights.alpha_star = null" {
            l.push_str(" ((1 - 1/(2 b kappa))/2)");
        }
    }
    lines.join("\n")
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Object(map) if !map.contains_key("kind") => {
            for (k, x) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, x, out);
            }
        }
        _ => out.push(format!("{prefix} = {v}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.kappa(), 1.0);
        assert_eq!(c.alpha_star(), 0.25);
        assert_eq!(c.experiment.eps_list, vec![0.1, 0.05, 0.025, 0.0125]);
        assert_eq!(c.grids.rescaled.nv, 256);
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_json(r#"{"experiment": {"seed": 7, "horizon": 1.0}}"#).unwrap();
        assert_eq!(RunConfig::from_json(&c.echo()).unwrap(), c);
    }

    #[test]
    fn unknown_key_reports_path() {
        let e = RunConfig::from_json(r#"{"solver": {"dt_maxx": 0.1}}"#).unwrap_err();
        match e {
            Error::Config { path, .. } => assert!(path.starts_with("solver"), "{path}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn kappa_below_threshold_rejected() {
        let e = RunConfig::from_json(r#"{"weights": {"kappa": 0.4}}"#).unwrap_err();
        match e {
            Error::Config { path, message } => {
                assert_eq!(path, "weights.kappa");
                assert!(message.contains("0.5"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn increasing_eps_rejected() {
        assert!(RunConfig::from_json(r#"{"experiment": {"eps_list": [0.05, 0.1, 0.2]}}"#).is_err());
    }

    #[test]
    fn sample_times_are_geometric_after_zero() {
        let s = ExperimentSpec::default().sample_times();
        assert_eq!(s.len(), 40);
        assert_eq!((s[0], s[1], s[39]), (0.0, 1e-3, 2.0));
        let r1 = s[2] / s[1];
        let r2 = s[30] / s[29];
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn help_lists_every_section() {
        let d = documented_defaults();
        for key in ["model.adaptation.a", "grids.rescaled.nv", "solver.dt_max", "weights.kappa", "experiment.seed", "output.dir"] {
            assert!(d.contains(key), "{key}");
        }
    }
}
