use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Uniform node-centred axis on `[-half_width, half_width]`, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    n: usize,
    half_width: f64,
}

impl Axis {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 2 {
            return Err(domain(format!("axis needs at least 2 nodes, got {n}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(domain(format!("axis half width must be positive, got {half_width}")));
        }
        Ok(Self { n, half_width })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    /// Symmetric by construction: `node(n-1-j) == -node(j)` bit for bit.
    pub fn node(&self, j: usize) -> f64 {
        let m = (self.n - 1) as f64;
        self.half_width * (2.0 * j as f64 - m) / m
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    /// Midpoint between nodes `j` and `j+1`.
    pub fn face(&self, j: usize) -> f64 {
        0.5 * (self.node(j) + self.node(j + 1))
    }

    /// Same node count, half width multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.n, self.half_width * factor)
    }

    /// Fractional index of `x`; values outside `[0, n-1]` lie off the axis.
    /// Fractional index of `x`; end nodes map exactly to 0 and n − 1 despite rounding.
    pub fn position(&self, x: f64) -> f64 {
        let p = (x + self.half_width) / self.spacing();
        let last = (self.n - 1) as f64;
        if (p - last).abs() < 1e-9 {
            last
        } else if p.abs() < 1e-9 {
            0.0
        } else {
            p
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub v: Axis,
    pub w: Axis,
}

impl PhaseGrid {
    pub fn new(nv: usize, lv: f64, nw: usize, lw: f64) -> Result<Self> {
        Ok(Self { v: Axis::new(nv, lv)?, w: Axis::new(nw, lw)? })
    }

    pub fn nv(&self) -> usize {
        self.v.len()
    }

    pub fn nw(&self) -> usize {
        self.w.len()
    }

    pub fn dv(&self) -> f64 {
        self.v.spacing()
    }

    pub fn dw(&self) -> f64 {
        self.w.spacing()
    }

    pub fn cell_area(&self) -> f64 {
        self.dv() * self.dw()
    }

    /// Number of values in one spatial slice.
    pub fn slice_len(&self) -> usize {
        self.nv() * self.nw()
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        j * self.nw() + k
    }
}

/// Uniform nodes on K = [0, 1] with trapezoidal weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SpatialGrid {
    pub fn uniform(nx: usize) -> Result<Self> {
        match nx {
            0 => Err(domain("spatial grid needs at least one node")),
            1 => Ok(Self { nodes: vec![0.5], weights: vec![1.0] }),
            _ => {
                let h = 1.0 / (nx - 1) as f64;
                let nodes = (0..nx).map(|i| i as f64 * h).collect();
                let mut weights = vec![h; nx];
                weights[0] *= 0.5;
                weights[nx - 1] *= 0.5;
                Ok(Self { nodes, weights })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(f, w)| f * w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_is_symmetric_and_uniform() {
        let a = Axis::new(256, 8.0).unwrap();
        for j in 0..256 {
            assert_eq!(a.node(j), -a.node(255 - j));
        }
        assert_eq!(a.node(0), -8.0);
        assert_eq!(a.node(255), 8.0);
        let h = a.spacing();
        for j in 1..256 {
            assert!((a.node(j) - a.node(j - 1) - h).abs() < 1e-13);
        }
        assert!((a.position(a.node(17)) - 17.0).abs() < 1e-12);
    }

    #[test]
    fn odd_axis_has_exact_zero() {
        let a = Axis::new(129, 3.0).unwrap();
        assert_eq!(a.node(64), 0.0);
    }

    #[test]
    fn bad_axes_rejected() {
        assert!(Axis::new(1, 1.0).is_err());
        assert!(Axis::new(8, 0.0).is_err());
        assert!(Axis::new(8, f64::NAN).is_err());
    }

    #[test]
    fn trapezoid_weights_sum_to_one() {
        for nx in [1, 2, 3, 8, 33] {
            let g = SpatialGrid::uniform(nx).unwrap();
            let s: f64 = g.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "nx={nx}");
        }
        let g = SpatialGrid::uniform(11).unwrap();
        let lin: Vec<f64> = g.nodes().to_vec();
        assert!((g.integrate(&lin) - 0.5).abs() < 1e-14);
    }
}
