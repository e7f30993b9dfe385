use crate::error::{Error, Result};

/// Thomas factorization of a tridiagonal matrix, reused across many right-hand sides.
///
/// `lower[j]` is A[j][j-1] (entry 0 ignored), `upper[j]` is A[j][j+1] (last entry ignored).
#[derive(Clone, Debug)]
pub struct TridiagonalLu {
    mult: Vec<f64>,
    pivot: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagonalLu {
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        if lower.len() != n || upper.len() != n || n == 0 {
            return Err(Error::Shape("tridiagonal bands must share a non-zero length".into()));
        }
        let mut mult = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        pivot[0] = diag[0];
        for j in 1..n {
            if pivot[j - 1] == 0.0 || !pivot[j - 1].is_finite() {
                return Err(Error::Solver(format!("singular tridiagonal system at row {}", j - 1)));
            }
            mult[j] = lower[j] / pivot[j - 1];
            pivot[j] = diag[j] - mult[j] * upper[j - 1];
        }
        if pivot[n - 1] == 0.0 || !pivot[n - 1].is_finite() {
            return Err(Error::Solver("singular tridiagonal system at last row".into()));
        }
        Ok(Self { mult, pivot, upper: upper.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivot.is_empty()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.solve_rows(x, 1);
    }

    /// Solves for `m` right-hand sides at once: `x` holds `len()` rows of `m` values,
    /// row `j` being the j-th unknown of every system.
    pub fn solve_rows(&self, x: &mut [f64], m: usize) {
        let n = self.len();
        debug_assert_eq!(x.len(), n * m);
        for j in 1..n {
            let l = self.mult[j];
            let (prev, cur) = x[(j - 1) * m..(j + 1) * m].split_at_mut(m);
            for (c, p) in cur.iter_mut().zip(prev.iter()) {
                *c -= l * p;
            }
        }
        let inv = 1.0 / self.pivot[n - 1];
        x[(n - 1) * m..].iter_mut().for_each(|c| *c *= inv);
        for j in (0..n - 1).rev() {
            let (u, inv) = (self.upper[j], 1.0 / self.pivot[j]);
            let (cur, next) = x[j * m..(j + 2) * m].split_at_mut(m);
            for (c, nx) in cur.iter_mut().zip(next.iter()) {
                *c = (*c - u * nx) * inv;
            }
        }
    }
}

pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let lu = TridiagonalLu::factor(lower, diag, upper)?;
    let mut x = rhs.to_vec();
    lu.solve_in_place(&mut x);
    Ok(x)
}
