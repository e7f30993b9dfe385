//! Interpolation on uniform axes. Points off the axis evaluate to zero.

use super::grid::Axis;

/// Monotone piecewise cubic (Fritsch–Carlson) interpolant of samples on a uniform axis.
pub struct Pchip<'a> {
    axis: Axis,
    values: &'a [f64],
    slopes: Vec<f64>,
}

impl<'a> Pchip<'a> {
    pub fn new(axis: Axis, values: &'a [f64]) -> Self {
        let n = values.len();
        let h = axis.spacing();
        let delta: Vec<f64> = values.windows(2).map(|p| (p[1] - p[0]) / h).collect();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            let (a, b) = (delta[i - 1], delta[i]);
            if a * b > 0.0 {
                // harmonic mean, the uniform-spacing Fritsch–Butland form
                slopes[i] = 2.0 * a * b / (a + b);
            }
        }
        if n > 2 {
            slopes[0] = end_slope(delta[0], delta[1]);
            slopes[n - 1] = end_slope(delta[n - 2], delta[n - 3]);
        } else {
            slopes[0] = delta[0];
            slopes[n - 1] = delta[0];
        }
        Self { axis, values, slopes }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let p = self.axis.position(x);
        if !(p >= 0.0 && p <= (n - 1) as f64) {
            return 0.0;
        }
        let i = (p.floor() as usize).min(n - 2);
        let s = p - i as f64;
        let h = self.axis.spacing();
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1
    }
}

fn end_slope(d0: f64, d1: f64) -> f64 {
    let m = (3.0 * d0 - d1) / 2.0;
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// Piecewise linear interpolation on a uniform axis.
pub fn linear(axis: &Axis, values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let p = axis.position(x);
    if !(p >= 0.0 && p <= (n - 1) as f64) {
        return 0.0;
    }
    let i = (p.floor() as usize).min(n - 2);
    let s = p - i as f64;
    (1.0 - s) * values[i] + s * values[i + 1]
}
