//! Model coefficients: voltage drift N, adaptation A, interaction kernel Ψ and the
//! spatial density ρ₀, plus the nonlocal coupling terms built from them.

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, shape, Result};
use crate::phase_space::{DensityField, PhaseGrid, SpatialGrid};

/// Polynomial voltage drift, coefficients in ascending powers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub coefficients: Vec<f64>,
    pub growth_exponent_p: u32,
}

impl DriftSpec {
    pub fn cubic() -> Self {
        Self { coefficients: vec![0.0, 1.0, 0.0, -1.0], growth_exponent_p: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.growth_exponent_p < 2 {
            return Err(domain("growth exponent p must be at least 2"));
        }
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(domain("drift coefficients must be finite"));
        }
        let deg = self.degree();
        let lead = self.coefficients.get(deg).copied().unwrap_or(0.0);
        if deg < 3 || deg % 2 == 0 || lead >= 0.0 {
            return Err(domain(format!(
                "drift must have odd degree >= 3 and negative leading coefficient (degree {deg}, leading {lead})"
            )));
        }
        Ok(())
    }

    pub fn degree(&self) -> usize {
        self.coefficients.iter().rposition(|c| *c != 0.0).unwrap_or(0)
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * v + c)
    }

    pub fn derivative(&self, v: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * v + i as f64 * c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AdaptationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.c.is_finite() && self.b.is_finite() && self.b > 0.0) {
            return Err(domain(format!("adaptation needs finite a, c and b > 0, got {self:?}")));
        }
        Ok(())
    }

    /// A(v, w) = a v − b w + c.
    #[inline]
    pub fn eval(&self, v: f64, w: f64) -> f64 {
        self.a * v - self.b * w + self.c
    }

    /// A₀(v, w) = A(v, w) − A(0, 0).
    #[inline]
    pub fn linear_part(&self, v: f64, w: f64) -> f64 {
        self.a * v - self.b * w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelShape {
    /// Normalized Gaussian of width σ scaled by `mass`.
    Gaussian { sigma: f64, mass: f64 },
    /// (λ/2) e^{−λ|x−x'|}.
    Exponential { lambda: f64 },
    Constant { value: f64 },
    /// Explicit nx × nx matrix Ψ[i][j] = Ψ(x_i, x_j).
    Table { values: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub exponent_r: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { shape: KernelShape::Gaussian { sigma: 0.1, mass: 1.0 }, exponent_r: 2.0 }
    }
}

impl KernelSpec {
    fn value(&self, x: f64, y: f64) -> f64 {
        match &self.shape {
            KernelShape::Gaussian { sigma, mass } => {
                let d = (x - y) / sigma;
                mass * (-0.5 * d * d).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            KernelShape::Exponential { lambda } => 0.5 * lambda * (-lambda * (x - y).abs()).exp(),
            KernelShape::Constant { value } => *value,
            KernelShape::Table { .. } => unreachable!("tables are indexed, not evaluated"),
        }
    }
}

/// Ψ discretized on the spatial grid together with its integrability bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    n: usize,
    matrix: Vec<f64>,
    weights: Vec<f64>,
    bound: f64,
}

impl Kernel {
    pub fn build(spec: &KernelSpec, grid: &SpatialGrid) -> Result<Self> {
        if !(spec.exponent_r > 1.0) {
            return Err(domain(format!("kernel exponent r must exceed 1, got {}", spec.exponent_r)));
        }
        let n = grid.len();
        let x = grid.nodes();
        let matrix: Vec<f64> = match &spec.shape {
            KernelShape::Table { values } => {
                if values.len() != n || values.iter().any(|r| r.len() != n) {
                    return Err(shape(format!("kernel table must be {n} x {n}")));
                }
                values.iter().flatten().copied().collect()
            }
            KernelShape::Gaussian { sigma, .. } if !(*sigma > 0.0) => {
                return Err(domain("gaussian kernel needs sigma > 0"))
            }
            KernelShape::Exponential { lambda } if !(*lambda > 0.0) => {
                return Err(domain("exponential kernel needs lambda > 0"))
            }
            _ => (0..n * n).map(|k| spec.value(x[k / n], x[k % n])).collect(),
        };
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(domain("kernel matrix has non-finite entries"));
        }
        let w = grid.weights();
        let bound = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (matrix[j * n + i].abs() + matrix[i * n + j].abs().powf(spec.exponent_r)) * w[j])
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        if !bound.is_finite() {
            return Err(domain("kernel integrability bound is not finite"));
        }
        Ok(Self { n, matrix, weights: w.to_vec(), bound })
    }

    /// sup_x ∫ (|Ψ(x', x)| + |Ψ(x, x')|^r) dx'.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    /// (Ψ * g)(x_i) = Σ_j Ψ(x_i, x_j) g_j ω_j.
    pub fn conv_right(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.n {
            return Err(shape(format!("grid function has {} nodes, kernel {}", g.len(), self.n)));
        }
        Ok((0..self.n)
            .map(|i| {
                let row = &self.matrix[i * self.n..(i + 1) * self.n];
                row.iter().zip(g).zip(&self.weights).map(|((k, g), w)| k * g * w).sum()
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityProfile {
    Constant { value: f64 },
    /// base + amplitude·cos(2πx), clipped to [m_*, 1/m_*].
    CosineBump { base: f64, amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialDensity {
    values: Vec<f64>,
    m_star: f64,
}

impl SpatialDensity {
    pub fn new(values: Vec<f64>, m_star: f64) -> Result<Self> {
        if !(m_star > 0.0 && m_star <= 1.0) {
            return Err(domain(format!("m_star must lie in (0, 1], got {m_star}")));
        }
        if let Some(r) = values.iter().find(|r| !(**r >= m_star && **r <= 1.0 / m_star)) {
            return Err(domain(format!("rho0 value {r} outside [{m_star}, {}]", 1.0 / m_star)));
        }
        Ok(Self { values, m_star })
    }

    pub fn from_profile(profile: &DensityProfile, grid: &SpatialGrid, m_star: f64) -> Result<Self> {
        let values = grid
            .nodes()
            .iter()
            .map(|&x| match profile {
                DensityProfile::Constant { value } => *value,
                DensityProfile::CosineBump { base, amplitude } => {
                    (base + amplitude * (2.0 * std::f64::consts::PI * x).cos())
                        .clamp(m_star, 1.0 / m_star)
                }
            })
            .collect();
        Self::new(values, m_star)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn m_star(&self) -> f64 {
        self.m_star
    }
}

/// Outcome of the numerical checks on the confinement assumptions for N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub v_max: f64,
    /// sup over 1 ≤ |v| ≤ v_max of |N(v)/v| / |v|^{p−1}.
    pub omega_growth_sup: f64,
    /// N(v)/v is non-increasing in |v| on |v| ≥ 1 and never exceeds its value at 1.
    pub omega_confining: bool,
    /// sup over |v| ≥ 1 of v²ω(v) − C₀N'(v) for C₀ ∈ {1, 10, 100}.
    pub third_condition_sups: Vec<f64>,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.omega_growth_sup.is_finite()
            && self.omega_confining
            && self.third_condition_sups.iter().all(|s| s.is_finite())
    }
}

/// Immutable model: everything the solvers need besides the grids of (v, w).
#[derive(Clone, Debug)]
pub struct Model {
    pub drift: DriftSpec,
    pub adaptation: AdaptationParams,
    kernel: Kernel,
    rho0: SpatialDensity,
    spatial: SpatialGrid,
    psi_rho0: Vec<f64>,
}

impl Model {
    pub fn new(
        drift: DriftSpec,
        adaptation: AdaptationParams,
        kernel: Kernel,
        rho0: SpatialDensity,
        spatial: SpatialGrid,
    ) -> Result<Self> {
        drift.validate()?;
        adaptation.validate()?;
        if rho0.values().len() != spatial.len() {
            return Err(shape("rho0 and spatial grid disagree"));
        }
        let psi_rho0 = kernel.conv_right(rho0.values())?;
        Ok(Self { drift, adaptation, kernel, rho0, spatial, psi_rho0 })
    }

    /// Same as [`Model::new`] without the confinement check on N, for linear or passive
    /// test drifts. Shape mismatches still panic.
    pub fn new_unchecked(
        drift: DriftSpec,
        adaptation: AdaptationParams,
        kernel: Kernel,
        rho0: SpatialDensity,
        spatial: SpatialGrid,
    ) -> Self {
        assert_eq!(rho0.values().len(), spatial.len(), "rho0 and spatial grid disagree");
        let psi_rho0 = kernel.conv_right(rho0.values()).expect("kernel built on this grid");
        Self { drift, adaptation, kernel, rho0, spatial, psi_rho0 }
    }

    pub fn nx(&self) -> usize {
        self.spatial.len()
    }

    pub fn spatial(&self) -> &SpatialGrid {
        &self.spatial
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn rho0(&self) -> &[f64] {
        self.rho0.values()
    }

    pub fn m_star(&self) -> f64 {
        self.rho0.m_star()
    }

    /// (Ψ * ρ₀)(x) per node.
    pub fn psi_rho0(&self) -> &[f64] {
        &self.psi_rho0
    }

    pub fn eval_drift(&self, v: f64) -> Result<f64> {
        if !v.is_finite() {
            return Err(domain(format!("drift evaluated at non-finite voltage {v}")));
        }
        Ok(self.drift.eval(v))
    }

    pub fn eval_adaptation(&self, v: f64, w: f64) -> Result<f64> {
        if !(v.is_finite() && w.is_finite()) {
            return Err(domain("adaptation evaluated at non-finite state"));
        }
        Ok(self.adaptation.eval(v, w))
    }

    pub fn conv_right(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.kernel.conv_right(g)
    }

    /// L[V] = V·(Ψ*ρ₀) − Ψ*(ρ₀V).
    pub fn nonlocal_operator(&self, voltage: &[f64]) -> Result<Vec<f64>> {
        let weighted: Vec<f64> = voltage.iter().zip(self.rho0()).map(|(v, r)| v * r).collect();
        let c = self.conv_right(&weighted)?;
        Ok(voltage.iter().zip(&self.psi_rho0).zip(c).map(|((v, p), c)| v * p - c).collect())
    }

    /// K[ρ₀μ](x_i, v) from the voltage means of μ.
    pub fn interaction_from_means(&self, voltage: &[f64], ix: usize, v: f64) -> Result<f64> {
        let weighted: Vec<f64> = voltage.iter().zip(self.rho0()).map(|(v, r)| v * r).collect();
        let c = self.conv_right(&weighted)?;
        Ok(v * self.psi_rho0[ix] - c[ix])
    }

    /// K[ρ₀μ](x_i, v) = ∫Ψ(x_i, x')(v − v')ρ₀(x')μ(x', u') dx'du'.
    pub fn nonlocal_interaction(&self, mu: &DensityField, ix: usize, v: f64) -> Result<f64> {
        let means = crate::phase_space::macro_moments(mu)?;
        self.interaction_from_means(&means.voltage, ix, v)
    }

    /// E(μ) = ∫N(v)μ du − N(V) for one (v, w) slice.
    pub fn nonlinearity_error(&self, slice: &[f64], grid: &PhaseGrid) -> Result<f64> {
        let vm = crate::phase_space::field::slice_v_marginal(grid, slice);
        let dv = grid.dv();
        let mass: f64 = vm.iter().sum::<f64>() * dv;
        if !(mass > 0.0) {
            return Err(domain("nonlinearity error of a slice without mass"));
        }
        let (mut mean, mut avg_n) = (0.0, 0.0);
        for (j, p) in vm.iter().enumerate() {
            let v = grid.v.node(j);
            mean += v * p;
            avg_n += self.drift.eval(v) * p;
        }
        mean *= dv / mass;
        avg_n *= dv / mass;
        Ok(avg_n - self.drift.eval(mean))
    }

    /// ∫N(c + θv) p(v) dv − N(c) for a v-profile p in a frame centred at c with width θ.
    pub fn frame_nonlinearity_error(&self, profile: &[f64], grid: &PhaseGrid, c: f64, theta: f64) -> f64 {
        let mut acc = 0.0;
        for (j, p) in profile.iter().enumerate() {
            acc += self.drift.eval(c + theta * grid.v.node(j)) * p;
        }
        acc * grid.dv() - self.drift.eval(c)
    }

    /// Numerical checks of the confinement assumptions on N over [−v_max, v_max].
    pub fn check_assumptions(&self, v_max: f64) -> Result<AssumptionReport> {
        if !(v_max > 1.0) {
            return Err(domain("assumption checks need v_max > 1"));
        }
        let p = self.drift.growth_exponent_p as i32;
        let n = 4000;
        let omega1 = self.drift.eval(1.0).max(-self.drift.eval(-1.0));
        let (mut growth, mut confining) = (0.0_f64, true);
        let mut thirds = vec![f64::NEG_INFINITY; 3];
        for sign in [1.0, -1.0] {
            let mut prev = f64::INFINITY;
            for i in 0..=n {
                let v = sign * (1.0 + (v_max - 1.0) * i as f64 / n as f64);
                let om = self.drift.eval(v) / v;
                growth = growth.max(om.abs() / v.abs().powi(p - 1));
                if om > prev + 1e-12 || om > omega1 + 1e-12 {
                    confining = false;
                }
                prev = om;
                for (s, c0) in thirds.iter_mut().zip([1.0, 10.0, 100.0]) {
                    *s = s.max(v * v * om - c0 * self.drift.derivative(v));
                }
            }
        }
        let report = AssumptionReport {
            v_max,
            omega_growth_sup: growth,
            omega_confining: confining,
            third_condition_sups: thirds,
        };
        info!("drift assumption checks on [-{v_max}, {v_max}]: {report:?}");
        Ok(report)
    }

    pub fn require_normalized(mu: &DensityField) -> Result<()> {
        mu.check_normalized(1e-8).map_err(|e| contract(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(nx: usize, kernel: KernelShape, rho: DensityProfile) -> Model {
        let g = SpatialGrid::uniform(nx).unwrap();
        let k = Kernel::build(&KernelSpec { shape: kernel, exponent_r: 2.0 }, &g).unwrap();
        let r = SpatialDensity::from_profile(&rho, &g, 0.5).unwrap();
        Model::new(DriftSpec::cubic(), AdaptationParams { a: 1.0, b: 2.0, c: 3.0 }, k, r, g).unwrap()
    }

    #[test]
    fn cubic_drift_values() {
        let d = DriftSpec::cubic();
        assert_eq!(d.eval(0.0), 0.0);
        assert_eq!(d.eval(1.0), 0.0);
        assert_eq!(d.eval(2.0), -6.0);
        assert_eq!(d.derivative(2.0), -11.0);
        let m = model(3, KernelShape::Constant { value: 0.0 }, DensityProfile::Constant { value: 1.0 });
        assert!(m.eval_drift(f64::NAN).is_err());
    }

    #[test]
    fn drift_validation() {
        assert!(DriftSpec { coefficients: vec![0.0, 1.0, 0.0, 1.0], growth_exponent_p: 3 }.validate().is_err());
        assert!(DriftSpec { coefficients: vec![0.0, -1.0], growth_exponent_p: 3 }.validate().is_err());
        assert!(DriftSpec { coefficients: vec![0.0, 0.0, 0.0, 0.0, -1.0], growth_exponent_p: 3 }.validate().is_err());
        assert!(DriftSpec { coefficients: vec![0.0, 1.0, 0.0, -1.0], growth_exponent_p: 1 }.validate().is_err());
        assert!(DriftSpec::cubic().validate().is_ok());
    }

    #[test]
    fn adaptation_values() {
        let a = AdaptationParams { a: 1.0, b: 2.0, c: 3.0 };
        assert_eq!(a.eval(0.0, 0.0), 3.0);
        assert_eq!(a.linear_part(0.0, 0.0), 0.0);
        assert_eq!(a.eval(1.0, 1.0), 2.0);
        assert!(AdaptationParams { a: 1.0, b: 0.0, c: 0.0 }.validate().is_err());
    }

    #[test]
    fn convolution_trivial_cases() {
        let m = model(9, KernelShape::Constant { value: 0.0 }, DensityProfile::Constant { value: 1.0 });
        assert!(m.conv_right(&[1.0; 9]).unwrap().iter().all(|v| *v == 0.0));
        let m = model(9, KernelShape::Constant { value: 1.0 }, DensityProfile::Constant { value: 1.0 });
        for v in m.conv_right(&[1.0; 9]).unwrap() {
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert!(m.conv_right(&[1.0; 8]).is_err());
    }

    #[test]
    fn nonlocal_operator_oracles() {
        let m = model(101, KernelShape::Constant { value: 1.0 }, DensityProfile::Constant { value: 1.0 });
        let x = m.spatial().nodes().to_vec();
        let l = m.nonlocal_operator(&x).unwrap();
        for (xi, li) in x.iter().zip(&l) {
            assert!((li - (xi - 0.5)).abs() < 1e-12);
        }
        assert!(m.nonlocal_operator(&[0.7; 101]).unwrap().iter().all(|v| v.abs() < 1e-14));
        let l3 = m.nonlocal_operator(&x.iter().map(|v| 3.0 * v).collect::<Vec<_>>()).unwrap();
        for (a, b) in l3.iter().zip(&l) {
            assert!((a - 3.0 * b).abs() < 1e-14);
        }
        let k = m.interaction_from_means(&x, 100, 1.0).unwrap();
        assert!((k - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kernel_bound_controls_convolution() {
        let m = model(
            17,
            KernelShape::Exponential { lambda: 3.0 },
            DensityProfile::CosineBump { base: 1.0, amplitude: 0.4 },
        );
        let g: Vec<f64> = (0..17).map(|i| ((i * 7) as f64).sin()).collect();
        let sup = g.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        for v in m.conv_right(&g).unwrap() {
            assert!(v.abs() <= m.kernel().bound() * sup);
        }
        assert!(m.rho0().iter().all(|r| *r >= 0.5 && *r <= 2.0));
    }

    #[test]
    fn bad_configs_rejected() {
        let g = SpatialGrid::uniform(4).unwrap();
        assert!(Kernel::build(&KernelSpec { shape: KernelShape::Constant { value: 1.0 }, exponent_r: 1.0 }, &g).is_err());
        let t = KernelShape::Table { values: vec![vec![1.0; 3]; 4] };
        assert!(Kernel::build(&KernelSpec { shape: t, exponent_r: 2.0 }, &g).is_err());
        assert!(SpatialDensity::new(vec![0.1, 1.0], 0.5).is_err());
    }

    #[test]
    fn nonlinearity_error_of_gaussian() {
        let m = model(2, KernelShape::Constant { value: 0.0 }, DensityProfile::Constant { value: 1.0 });
        let grid = PhaseGrid::new(801, 8.0, 3, 1.0).unwrap();
        let (mean, var) = (0.4, 0.09);
        let p = crate::phase_space::shifted_maxwellian(&grid.v, 1.0 / var, mean).unwrap().values;
        let mut slice = vec![0.0; grid.slice_len()];
        for j in 0..801 {
            for k in 0..3 {
                slice[grid.index(j, k)] = p[j] / (3.0 * grid.dw());
            }
        }
        let e = m.nonlinearity_error(&slice, &grid).unwrap();
        assert!((e + 3.0 * mean * var).abs() < 1e-9, "{e}");
        assert!(m.nonlinearity_error(&vec![0.0; grid.slice_len()], &grid).is_err());
    }

    #[test]
    fn assumption_checks_pass_for_cubic() {
        let m = model(2, KernelShape::Constant { value: 0.0 }, DensityProfile::Constant { value: 1.0 });
        let r = m.check_assumptions(8.0).unwrap();
        assert!(r.holds(), "{r:?}");
        assert!(r.omega_growth_sup > 0.98 && r.omega_growth_sup < 1.0);
    }
}
