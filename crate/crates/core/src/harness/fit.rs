//! Least-squares rates on log-log axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    Eps,
    SqrtEps,
    /// ε√(|ln ε| + 1)
    EpsSqrtLog,
}

impl Abscissa {
    pub fn transform(self, eps: f64) -> f64 {
        match self {
            Abscissa::Eps => eps,
            Abscissa::SqrtEps => eps.sqrt(),
            Abscissa::EpsSqrtLog => eps * (eps.ln().abs() + 1.0).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub abscissa: Abscissa,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// ln e − (intercept + slope·ln x), in input order.
    pub residuals: Vec<f64>,
}

/// Fits ln e = intercept + slope·ln x(ε) over `(ε, e)` pairs.
pub fn fit_rate(points: &[(f64, f64)], abscissa: Abscissa) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("{} points, need at least 3", points.len())));
    }
    if let Some(p) = points.iter().find(|(e, v)| !(*e > 0.0 && *v > 0.0 && v.is_finite())) {
        return Err(Error::Fit(format!("non-positive or non-finite pair {p:?}")));
    }
    let xs: Vec<f64> = points.iter().map(|(e, _)| abscissa.transform(*e).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - intercept - slope * x).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit { abscissa, slope, intercept, r_squared, residuals })
}
