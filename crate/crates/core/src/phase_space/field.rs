use serde::{Deserialize, Serialize};

use super::grid::{Axis, PhaseGrid};
use crate::error::{contract, domain, shape, Result};

/// Grid function on (x, v, w), row-major with w fastest.
///
/// Used for probability densities (unit mass per spatial node) and, without the
/// positivity requirement, for signed remainders such as the orthogonal part of a
/// projection.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    grid: PhaseGrid,
    nx: usize,
    values: Vec<f64>,
    time: f64,
}

/// Default tolerance on the per-node unit-mass contract.
pub const MASS_TOLERANCE: f64 = 1e-10;

impl DensityField {
    pub fn zeros(grid: PhaseGrid, nx: usize, time: f64) -> Self {
        Self { grid, nx, values: vec![0.0; nx * grid.slice_len()], time }
    }

    pub fn from_values(grid: PhaseGrid, nx: usize, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != nx * grid.slice_len() {
            return Err(shape(format!(
                "expected {} values for nx={nx}, nv={}, nw={}, got {}",
                nx * grid.slice_len(),
                grid.nv(),
                grid.nw(),
                values.len()
            )));
        }
        Ok(Self { grid, nx, values, time })
    }

    /// Tensor product `v_profile[x] ⊗ w_profile[x]` at every node.
    pub fn product(
        grid: PhaseGrid,
        v_profiles: &[Vec<f64>],
        w_profiles: &[Vec<f64>],
        time: f64,
    ) -> Result<Self> {
        if v_profiles.len() != w_profiles.len() {
            return Err(shape("v and w profile counts differ"));
        }
        let nx = v_profiles.len();
        let mut field = Self::zeros(grid, nx, time);
        for ix in 0..nx {
            let (pv, pw) = (&v_profiles[ix], &w_profiles[ix]);
            if pv.len() != grid.nv() || pw.len() != grid.nw() {
                return Err(shape("profile length does not match grid"));
            }
            let s = field.slice_mut(ix);
            for (j, a) in pv.iter().enumerate() {
                for (k, b) in pw.iter().enumerate() {
                    s[j * pw.len() + k] = a * b;
                }
            }
        }
        Ok(field)
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn slice(&self, ix: usize) -> &[f64] {
        let n = self.grid.slice_len();
        &self.values[ix * n..(ix + 1) * n]
    }

    pub fn slice_mut(&mut self, ix: usize) -> &mut [f64] {
        let n = self.grid.slice_len();
        &mut self.values[ix * n..(ix + 1) * n]
    }

    /// Replace the grid keeping the values; used when a frame is rescaled in place.
    pub(crate) fn set_grid(&mut self, grid: PhaseGrid) {
        debug_assert_eq!(grid.slice_len(), self.grid.slice_len());
        self.grid = grid;
    }

    pub fn mass(&self, ix: usize) -> f64 {
        self.slice(ix).iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.nx).map(|ix| self.mass(ix)).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Errors unless every node has unit mass within `tol` and no entry is negative.
    pub fn check_density(&self, tol: f64) -> Result<()> {
        if let Some(bad) = self.values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(contract(format!("entry {bad} is negative or not finite: {}", self.values[bad])));
        }
        self.check_normalized(tol)
    }

    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        for ix in 0..self.nx {
            let m = self.mass(ix);
            if !((m - 1.0).abs() <= tol) {
                return Err(contract(format!("node {ix} has mass {m}, expected 1")));
            }
        }
        Ok(())
    }

    /// Rescales each node to unit mass and returns the factors applied.
    pub fn renormalize(&mut self) -> Vec<f64> {
        let area = self.grid.cell_area();
        let n = self.grid.slice_len();
        self.values
            .chunks_mut(n)
            .map(|s| {
                let m = s.iter().sum::<f64>() * area;
                let f = if m > 0.0 { 1.0 / m } else { 1.0 };
                s.iter_mut().for_each(|x| *x *= f);
                f
            })
            .collect()
    }

    /// Sets negative entries to zero; returns how many were clamped.
    pub fn clamp_negative(&mut self) -> usize {
        let mut count = 0;
        for x in self.values.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
                count += 1;
            }
        }
        count
    }

    /// ∫ f dw as a function of v.
    pub fn v_marginal(&self, ix: usize) -> Vec<f64> {
        slice_v_marginal(&self.grid, self.slice(ix))
    }

    /// ∫ f dv as a function of w.
    pub fn w_marginal(&self, ix: usize) -> Vec<f64> {
        slice_w_marginal(&self.grid, self.slice(ix))
    }

    pub fn l1_distance(&self, other: &Self, ix: usize) -> f64 {
        l1(&self.grid, self.slice(ix), other.slice(ix))
    }
}

pub fn slice_v_marginal(grid: &PhaseGrid, s: &[f64]) -> Vec<f64> {
    let dw = grid.dw();
    s.chunks(grid.nw()).map(|row| row.iter().sum::<f64>() * dw).collect()
}

pub fn slice_w_marginal(grid: &PhaseGrid, s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.nw()];
    for row in s.chunks(grid.nw()) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    let dv = grid.dv();
    out.iter_mut().for_each(|o| *o *= dv);
    out
}

pub fn l1(grid: &PhaseGrid, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * grid.cell_area()
}

/// Voltage and adaptation means per spatial node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroFields {
    pub voltage: Vec<f64>,
    pub adaptation: Vec<f64>,
}

impl MacroFields {
    pub fn new(voltage: Vec<f64>, adaptation: Vec<f64>) -> Result<Self> {
        if voltage.len() != adaptation.len() {
            return Err(shape("voltage and adaptation lengths differ"));
        }
        if voltage.iter().chain(&adaptation).any(|x| !x.is_finite()) {
            return Err(domain("macroscopic fields must be finite"));
        }
        Ok(Self { voltage, adaptation })
    }

    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }
}

/// (∫v f, ∫w f) of one slice.
pub fn slice_means(grid: &PhaseGrid, s: &[f64]) -> (f64, f64) {
    let (mut mv, mut mw) = (0.0, 0.0);
    let wn = grid.w.nodes();
    for (j, row) in s.chunks(grid.nw()).enumerate() {
        let v = grid.v.node(j);
        let mut r = 0.0;
        for (x, w) in row.iter().zip(&wn) {
            r += x;
            mw += x * w;
        }
        mv += v * r;
    }
    let a = grid.cell_area();
    (mv * a, mw * a)
}

pub fn macro_moments(mu: &DensityField) -> Result<MacroFields> {
    mu.check_normalized(1e-8)?;
    let (v, w): (Vec<f64>, Vec<f64>) =
        (0..mu.nx()).map(|ix| slice_means(mu.grid(), mu.slice(ix))).unzip();
    Ok(MacroFields { voltage: v, adaptation: w })
}

fn check_order(q: u32, p: u32) -> Result<()> {
    if q < 2 || q % 2 != 0 || q > 2 * p {
        return Err(domain(format!("moment order {q} must be even in [2, {}]", 2 * p)));
    }
    Ok(())
}

/// M_q = ∫|u|^q f du per node; `p` is the drift growth exponent bounding q.
pub fn moment_q(mu: &DensityField, q: u32, p: u32) -> Result<Vec<f64>> {
    check_order(q, p)?;
    mu.check_normalized(1e-8)?;
    let g = mu.grid();
    let (vn, wn) = (g.v.nodes(), g.w.nodes());
    let h = q as i32 / 2;
    Ok((0..mu.nx())
        .map(|ix| {
            let mut acc = 0.0;
            for (j, row) in mu.slice(ix).chunks(g.nw()).enumerate() {
                let v2 = vn[j] * vn[j];
                for (x, w) in row.iter().zip(&wn) {
                    acc += x * (v2 + w * w).powi(h);
                }
            }
            acc * g.cell_area()
        })
        .collect())
}

/// D_q = ∫|v − V|^q f du per node.
pub fn centered_moment_q(mu: &DensityField, q: u32, p: u32) -> Result<Vec<f64>> {
    check_order(q, p)?;
    let m = macro_moments(mu)?;
    let g = mu.grid();
    Ok((0..mu.nx())
        .map(|ix| {
            let vm = slice_v_marginal(g, mu.slice(ix));
            centered_v_moment(&g.v, &vm, m.voltage[ix], q)
        })
        .collect())
}

/// ∫|v − c|^q p(v) dv for a v-profile.
pub fn centered_v_moment(axis: &Axis, profile: &[f64], c: f64, q: u32) -> f64 {
    profile
        .iter()
        .enumerate()
        .map(|(j, p)| p * (axis.node(j) - c).abs().powi(q as i32))
        .sum::<f64>()
        * axis.spacing()
}

/// Sampled Gaussian of variance 1/ρ renormalized to unit discrete mass.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMaxwellian {
    pub rho: f64,
    pub values: Vec<f64>,
    /// Discrete mass of the raw samples before renormalization.
    pub raw_mass: f64,
}

pub fn maxwellian(axis: &Axis, rho: f64) -> Result<DiscreteMaxwellian> {
    shifted_maxwellian(axis, rho, 0.0)
}

/// Maxwellian centred at `center`, same renormalization policy.
pub fn shifted_maxwellian(axis: &Axis, rho: f64, center: f64) -> Result<DiscreteMaxwellian> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(domain(format!("Maxwellian needs rho > 0, got {rho}")));
    }
    let c = (rho / (2.0 * std::f64::consts::PI)).sqrt();
    let mut values: Vec<f64> = (0..axis.len())
        .map(|j| {
            let v = axis.node(j) - center;
            c * (-0.5 * rho * v * v).exp()
        })
        .collect();
    let raw_mass = values.iter().sum::<f64>() * axis.spacing();
    if raw_mass <= 0.0 {
        return Err(domain("Maxwellian has no mass on this axis"));
    }
    values.iter_mut().for_each(|x| *x /= raw_mass);
    Ok(DiscreteMaxwellian { rho, values, raw_mass })
}
