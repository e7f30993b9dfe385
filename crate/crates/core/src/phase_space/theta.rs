//! Concentration rate of the voltage distribution.
//!
//! θ² = ε + (1 − ε) e^{−2ρt/ε} solves ½ d(θ²)/dt + (ρ/ε) θ² = ρ with θ(0) = 1.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(domain(format!("epsilon must lie in (0, 1], got {eps}")));
    }
    Ok(())
}

/// θ², written as 1 + (1 − ε)·expm1(−2ρt/ε) so that t = 0 gives exactly 1.
pub fn theta_squared(t: f64, rho: f64, eps: f64) -> f64 {
    1.0 + (1.0 - eps) * (-2.0 * rho * t / eps).exp_m1()
}

pub fn theta(t: f64, rho: f64, eps: f64) -> f64 {
    theta_squared(t, rho, eps).sqrt()
}

/// Analytic d(θ²)/dt.
pub fn theta_squared_rate(t: f64, rho: f64, eps: f64) -> f64 {
    let k = 2.0 * rho / eps;
    -(1.0 - eps) * k * (-k * t).exp()
}

/// ∫_{t0}^{t1} θ^{-2} ds in closed form.
pub fn integrated_inverse_theta_squared(t0: f64, t1: f64, rho: f64, eps: f64) -> f64 {
    (t1 - t0) / eps
        + (theta_squared(t1, rho, eps).ln() - theta_squared(t0, rho, eps).ln()) / (2.0 * rho)
}

/// θ at one time for every spatial node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaField {
    pub epsilon: f64,
    pub values: Vec<f64>,
    pub time: f64,
}

impl ThetaField {
    pub fn at(t: f64, rho0: &[f64], eps: f64) -> Result<Self> {
        check_eps(eps)?;
        if t < 0.0 {
            return Err(domain("theta is defined for t >= 0"));
        }
        Ok(Self { epsilon: eps, values: rho0.iter().map(|&r| theta(t, r, eps)).collect(), time: t })
    }

    /// A constant field, for frames that are not tied to the ε-dynamics.
    pub fn uniform(value: f64, nx: usize, eps: f64, time: f64) -> Self {
        Self { epsilon: eps, values: vec![value; nx], time }
    }
}
