//! Initial data of an experiment: ν₀ on the rescaled box, the kinetic and limit frames,
//! and the adaptation profile samples the error metrics compare against.

use crate::config::{InitialData, RunConfig};
use crate::error::Result;
use crate::macro_solver::LimitState;
use crate::model::Model;
use crate::phase_space::{maxwellian, shifted_maxwellian, DensityField, MacroFields, PhaseGrid};

#[derive(Clone, Debug)]
pub struct Prepared {
    pub grid: PhaseGrid,
    pub nu0: DensityField,
    /// Kinetic initial frame (V₀ + offset, W₀).
    pub frame0: MacroFields,
    pub limit0: LimitState,
    /// ν̄₀ on the rescaled w-axis, unit discrete mass. In comoving coordinates the limit
    /// marginal stays equal to these samples for all time.
    pub bar_nu0: Vec<f64>,
    /// μ̄₀(w) = ν̄₀(w − W₀) per node on the same axis.
    pub bar_mu0: Vec<Vec<f64>>,
    /// ‖U₀ − U₀^ε‖_∞.
    pub macro_error0: f64,
}

pub fn prepare(config: &RunConfig, model: &Model) -> Result<Prepared> {
    let e = &config.experiment;
    let grid = config.grids.rescaled.grid()?;
    let (bar_nu0, _) = e.bar_nu0.sample(&grid.w)?;
    let v_profiles: Vec<Vec<f64>> = model
        .rho0()
        .iter()
        .map(|&rho| -> Result<Vec<f64>> {
            Ok(match e.initial_data {
                InitialData::WellPrepared => maxwellian(&grid.v, rho)?.values,
                InitialData::IllPreparedWide => maxwellian(&grid.v, rho / e.wide_variance_factor)?.values,
                InitialData::IllPreparedShifted => {
                    let a = shifted_maxwellian(&grid.v, rho, e.mixture_offset)?.values;
                    let b = shifted_maxwellian(&grid.v, rho, -e.mixture_offset)?.values;
                    a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
                }
            })
        })
        .collect::<Result<_>>()?;
    let nx = model.nx();
    let nu0 = DensityField::product(grid, &v_profiles, &vec![bar_nu0.clone(); nx], 0.0)?;
    let voltage: Vec<f64> = model
        .spatial()
        .nodes()
        .iter()
        .map(|x| e.voltage_mean + e.voltage_amplitude * (2.0 * std::f64::consts::PI * x).cos())
        .collect();
    let adaptation = vec![e.adaptation0; nx];
    let frame0 = MacroFields::new(voltage.iter().map(|v| v + e.macro_offset).collect(), adaptation.clone())?;
    let limit0 = LimitState::new(voltage, adaptation)?;
    let shifted: Vec<f64> = grid.w.nodes().iter().map(|&w| e.bar_nu0.eval(w - e.adaptation0)).collect();
    let mass = shifted.iter().sum::<f64>() * grid.dw();
    let bar_mu0 = vec![shifted.iter().map(|x| x / mass).collect::<Vec<f64>>(); nx];
    Ok(Prepared { grid, nu0, frame0, limit0, bar_nu0, bar_mu0, macro_error0: e.macro_offset.abs() })
}
