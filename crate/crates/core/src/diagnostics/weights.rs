//! Gaussian-type weights on (v, w) and on w alone.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightVariant {
    /// (2π/√(ρκ)) exp(½(ρv² + κw²))
    MEps,
    /// (ρκ)^{−½} exp(⅛(ρv² + κw²))
    MMinus,
    /// (ρκ)^{−½} exp(2(ρv² + κw²))
    MPlus,
    /// √(2π/κ) exp(½κw²)
    BarM,
    /// κ^{−½} exp(⅛κw²)
    BarMMinus,
    /// κ^{−½} exp(2κw²)
    BarMPlus,
}

impl WeightVariant {
    /// True for the weights that depend on w only.
    pub fn is_marginal(self) -> bool {
        matches!(self, WeightVariant::BarM | WeightVariant::BarMMinus | WeightVariant::BarMPlus)
    }

    fn exponent_factor(self) -> f64 {
        match self {
            WeightVariant::MEps | WeightVariant::BarM => 0.5,
            WeightVariant::MMinus | WeightVariant::BarMMinus => 0.125,
            WeightVariant::MPlus | WeightVariant::BarMPlus => 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub kappa: f64,
    pub variant: WeightVariant,
}

impl WeightSpec {
    pub fn new(kappa: f64, variant: WeightVariant) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(domain(format!("weight exponent kappa must be positive, got {kappa}")));
        }
        Ok(Self { kappa, variant })
    }

    /// κ must exceed 1/(2b) for the weighted estimates to close.
    pub fn check_against_damping(&self, b: f64) -> Result<()> {
        if self.kappa > 0.5 / b {
            Ok(())
        } else {
            Err(domain(format!(
                "kappa = {} must exceed 1/(2b) = {} for the weighted L2 estimates",
                self.kappa,
                0.5 / b
            )))
        }
    }

    /// ln m(v, w) for the spatial density `rho`; marginal weights ignore v and ρ.
    pub fn ln_eval(&self, rho: f64, v: f64, w: f64) -> f64 {
        let (k, c) = (self.kappa, self.variant.exponent_factor());
        let ln_pref = match self.variant {
            WeightVariant::MEps => (2.0 * std::f64::consts::PI).ln() - 0.5 * (rho * k).ln(),
            WeightVariant::MMinus | WeightVariant::MPlus => -0.5 * (rho * k).ln(),
            WeightVariant::BarM => 0.5 * (2.0 * std::f64::consts::PI / k).ln(),
            WeightVariant::BarMMinus | WeightVariant::BarMPlus => -0.5 * k.ln(),
        };
        let quad = if self.variant.is_marginal() { k * w * w } else { rho * v * v + k * w * w };
        ln_pref + c * quad
    }

    pub fn eval(&self, rho: f64, v: f64, w: f64) -> f64 {
        self.ln_eval(rho, v, w).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_positive_and_ordered() {
        let k = 1.0;
        let minus = WeightSpec::new(k, WeightVariant::BarMMinus).unwrap();
        let bar = WeightSpec::new(k, WeightVariant::BarM).unwrap();
        let plus = WeightSpec::new(k, WeightVariant::BarMPlus).unwrap();
        for i in -40..=40 {
            let w = i as f64 * 0.2;
            assert!(minus.eval(1.0, 0.0, w) > 0.0);
            // prefactors differ by √(2π), so compare the Gaussian parts
            assert!(minus.ln_eval(1.0, 0.0, w) + 0.5 * k.ln() <= bar.ln_eval(1.0, 0.0, w) - 0.5 * (2.0 * std::f64::consts::PI / k).ln() + 1e-12);
            assert!(bar.ln_eval(1.0, 0.0, w) - 0.5 * (2.0 * std::f64::consts::PI).ln() <= plus.ln_eval(1.0, 0.0, w) + 1e-12);
        }
    }

    #[test]
    fn m_eps_inverts_the_product_gaussian() {
        // m^ε · M_ρ(v) · √(κ/2π) e^{−κw²/2} = 1
        let (rho, k) = (1.3, 0.8);
        let m = WeightSpec::new(k, WeightVariant::MEps).unwrap();
        for (v, w) in [(0.0, 0.0), (1.5, -0.7), (-3.0, 2.0)] {
            let g = (rho / (2.0 * std::f64::consts::PI)).sqrt() * (-0.5 * rho * v * v).exp()
                * (k / (2.0 * std::f64::consts::PI)).sqrt() * (-0.5 * k * w * w).exp();
            assert!((m.eval(rho, v, w) * g - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kappa_threshold() {
        assert!(WeightSpec::new(0.4, WeightVariant::MEps).unwrap().check_against_damping(1.0).is_err());
        assert!(WeightSpec::new(0.5, WeightVariant::MEps).unwrap().check_against_damping(1.0).is_err());
        assert!(WeightSpec::new(1.0, WeightVariant::MEps).unwrap().check_against_damping(1.0).is_ok());
    }
}
