//! Stepper for μ^ε in the original (v, w) frame.
//!
//! Transport carries drift_v = N(v) − w − K_Ψ[ρ₀μ] and drift_w = A(v, w); the stiff
//! relaxation (ρ₀/ε)∂v((v − V)μ) and the diffusion ∂v²μ are one implicit Chang–Cooper
//! step centred on the current voltage mean.

use log::warn;
use rayon::prelude::*;

use super::fokker_planck::fokker_planck_in_place;
use super::transport::{advance_slice_subcycled, FaceDrifts, TransportScheme, TransportWork};
use crate::error::{contract, domain, shape, Result};
use crate::model::Model;
use crate::phase_space::field::slice_means;
use crate::phase_space::DensityField;

#[derive(Clone, Debug)]
pub struct DirectSolver<'m> {
    model: &'m Model,
    pub eps: f64,
    pub scheme: TransportScheme,
    pub cfl_safety: f64,
}

/// What one direct step did.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DirectTelemetry {
    pub substeps: usize,
    pub clamped: usize,
    pub mass_defect: f64,
}

impl<'m> DirectSolver<'m> {
    pub fn new(model: &'m Model, eps: f64, scheme: TransportScheme, cfl_safety: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(domain("eps must lie in (0, 1]"));
        }
        if !(cfl_safety > 0.0 && cfl_safety < 1.0) {
            return Err(domain("cfl_safety must lie in (0, 1)"));
        }
        Ok(Self { model, eps, scheme, cfl_safety })
    }

    /// True when ε is below the v-spacing, where the relaxation layer is under-resolved.
    pub fn stiffness_advisory(&self, mu: &DensityField) -> bool {
        let stiff = self.eps < mu.grid().dv();
        if stiff {
            warn!("eps = {} is below dv = {}: direct solver accuracy is not guaranteed", self.eps, mu.grid().dv());
        }
        stiff
    }

    fn voltages(mu: &DensityField) -> Vec<f64> {
        (0..mu.nx()).map(|ix| slice_means(mu.grid(), mu.slice(ix)).0).collect()
    }

    fn transport(&self, mu: &mut DensityField, dt: f64) -> Result<(usize, usize)> {
        let m = self.model;
        let grid = *mu.grid();
        let voltage = Self::voltages(mu);
        let coupled = m.conv_right(&voltage.iter().zip(m.rho0()).map(|(v, r)| v * r).collect::<Vec<_>>())?;
        let p = m.adaptation;
        let drifts: Vec<FaceDrifts> = (0..mu.nx())
            .map(|ix| {
                let (psi, cv) = (m.psi_rho0()[ix], coupled[ix]);
                FaceDrifts::from_fn(&grid, |v, w| m.drift.eval(v) - w - (v * psi - cv), |v, w| p.eval(v, w))
            })
            .collect();
        let (scheme, cfl) = (self.scheme, self.cfl_safety);
        let out = mu
            .values_mut()
            .par_chunks_mut(grid.slice_len())
            .zip(drifts.par_iter())
            .map_init(TransportWork::default, |work, (s, d)| advance_slice_subcycled(s, &grid, d, dt, scheme, cfl, work))
            .reduce(|| (0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
        Ok(out)
    }

    /// Half transport, implicit relaxation over dt, half transport.
    pub fn step(&self, mu: &mut DensityField, dt: f64) -> Result<DirectTelemetry> {
        if !(dt > 0.0) {
            return Err(domain("time step must be positive"));
        }
        if mu.nx() != self.model.nx() {
            return Err(shape("density and model disagree on nx"));
        }
        let (n1, c1) = self.transport(mu, 0.5 * dt)?;
        let center = Self::voltages(mu);
        let rho: Vec<f64> = self.model.rho0().iter().map(|r| r / self.eps).collect();
        fokker_planck_in_place(mu, dt, &vec![1.0; mu.nx()], &rho, &center)?;
        let (n2, c2) = self.transport(mu, 0.5 * dt)?;
        mu.set_time(mu.time() + dt);
        let mass_defect = mu.masses().iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
        if mass_defect > 1e-10 {
            return Err(contract(format!("mass defect {mass_defect:.3e} after direct step")));
        }
        if c1 + c2 > 0 {
            warn!("direct step at t={:.4}: {} negative entries clamped", mu.time(), c1 + c2);
        }
        Ok(DirectTelemetry { substeps: n1.max(n2), clamped: c1 + c2, mass_defect })
    }

    pub fn run(&self, mu: &mut DensityField, dt: f64, steps: usize) -> Result<DirectTelemetry> {
        let mut worst = DirectTelemetry::default();
        for _ in 0..steps {
            let t = self.step(mu, dt)?;
            worst.substeps = worst.substeps.max(t.substeps);
            worst.clamped += t.clamped;
            worst.mass_defect = worst.mass_defect.max(t.mass_defect);
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdaptationParams, DensityProfile, DriftSpec, Kernel, KernelShape, KernelSpec, SpatialDensity};
    use crate::phase_space::{shifted_maxwellian, PhaseGrid, SpatialGrid};

    fn passive_model(rho: f64) -> Model {
        let sg = SpatialGrid::uniform(1).unwrap();
        let kernel = Kernel::build(&KernelSpec { shape: KernelShape::Constant { value: 0.0 }, exponent_r: 2.0 }, &sg).unwrap();
        let density = SpatialDensity::from_profile(&DensityProfile::Constant { value: rho }, &sg, 0.5).unwrap();
        let drift = DriftSpec { coefficients: vec![0.0], growth_exponent_p: 2 };
        Model::new_unchecked(drift, AdaptationParams { a: 0.0, b: 1.0, c: 0.0 }, kernel, density, sg)
    }

    #[test]
    fn relaxes_to_narrow_gaussian_at_initial_mean() {
        let model = passive_model(1.0);
        let eps = 0.2;
        // all mass on the w = 0 column, so the −w coupling in the v-drift is inactive
        let g = PhaseGrid::new(200, 4.0, 3, 1e-3).unwrap();
        let mut mu = DensityField::zeros(g, 1, 0.0);
        for j in 0..g.nv() {
            let v = g.v.node(j);
            mu.values_mut()[g.index(j, 1)] = (-(v - 0.7).powi(2)).exp() + 0.5 * (-(v - 0.1).powi(2) * 3.0).exp();
        }
        mu.renormalize();
        let v0 = slice_means(&g, mu.slice(0)).0;
        let solver = DirectSolver::new(&model, eps, TransportScheme::Upwind, 0.9).unwrap();
        solver.run(&mut mu, 0.05, 200).unwrap();
        let target = shifted_maxwellian(&g.v, 1.0 / eps, v0).unwrap().values;
        let l1: f64 = mu.v_marginal(0).iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.dv();
        assert!(l1 < 1e-6, "{l1}");
    }

    #[test]
    fn advisory_flags_under_resolved_eps() {
        let model = passive_model(1.0);
        let g = PhaseGrid::new(41, 2.0, 4, 1.0).unwrap();
        let mu = DensityField::zeros(g, 1, 0.0);
        assert!(DirectSolver::new(&model, 0.05, TransportScheme::Upwind, 0.9).unwrap().stiffness_advisory(&mu));
        assert!(!DirectSolver::new(&model, 0.5, TransportScheme::Upwind, 0.9).unwrap().stiffness_advisory(&mu));
    }
}
