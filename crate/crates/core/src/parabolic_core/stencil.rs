//! Dirichlet three-point Laplacian and the factorised implicit diffusion
//! operator `I - dt Delta_h`.

use crate::error::{Error, Result};
use crate::lattice_weights::SpatialGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionStencil {
    n_x: usize,
    h: f64,
    dt: f64,
    /// `r = dt / h^2`; the implicit matrix has diagonal `1 + 2r` and
    /// off-diagonals `-r`.
    r: f64,
    /// Modified super-diagonal of the forward elimination.
    c_prime: Vec<f64>,
    /// Reciprocal pivots.
    inv_pivot: Vec<f64>,
}

impl DiffusionStencil {
    pub fn new(grid: &SpatialGrid, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        let n_x = grid.n_x();
        let h = grid.h();
        let r = dt / (h * h);
        let diag = 1.0 + 2.0 * r;
        let off = -r;
        let mut c_prime = vec![0.0; n_x];
        let mut inv_pivot = vec![0.0; n_x];
        let mut prev_c = 0.0;
        for j in 0..n_x {
            let pivot = diag - off * prev_c;
            if pivot.abs() < f64::EPSILON {
                return Err(Error::Singular("zero pivot in diffusion factorisation".into()));
            }
            inv_pivot[j] = 1.0 / pivot;
            c_prime[j] = off / pivot;
            prev_c = c_prime[j];
        }
        Ok(Self {
            n_x,
            h,
            dt,
            r,
            c_prime,
            inv_pivot,
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Overwrites `v` with `(I - dt Delta_h)^{-1} v`.
    pub fn solve_in_place(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n_x);
        let off = -self.r;
        let mut prev = 0.0;
        for j in 0..self.n_x {
            v[j] = (v[j] - off * prev) * self.inv_pivot[j];
            prev = v[j];
        }
        for j in (0..self.n_x - 1).rev() {
            v[j] -= self.c_prime[j] * v[j + 1];
        }
    }

    /// `Delta_h v` with zero Dirichlet values.
    pub fn apply_laplacian(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n_x;
        let inv_h2 = 1.0 / (self.h * self.h);
        (0..n)
            .map(|j| {
                let left = if j > 0 { v[j - 1] } else { 0.0 };
                let right = if j + 1 < n { v[j + 1] } else { 0.0 };
                (left - 2.0 * v[j] + right) * inv_h2
            })
            .collect()
    }

    /// `(I - dt Delta_h) v`.
    pub fn apply_implicit(&self, v: &[f64]) -> Vec<f64> {
        self.apply_laplacian(v)
            .iter()
            .zip(v)
            .map(|(l, x)| x - self.dt * l)
            .collect()
    }

    /// Eigenvalue `4 sin^2(k pi h / (2L)) / h^2` of `-Delta_h` for mode `k`.
    pub fn eigenvalue(&self, mode: usize) -> f64 {
        let length = self.h * (self.n_x + 1) as f64;
        let s = (mode as f64 * std::f64::consts::PI * self.h / (2.0 * length)).sin();
        4.0 * s * s / (self.h * self.h)
    }

    /// Max-norm residual `|(I - dt Delta_h) x - b| / |b|` of a solve.
    pub fn factorization_residual(&self, b: &[f64]) -> f64 {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        let back = self.apply_implicit(&x);
        let scale = b.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        back.iter()
            .zip(b)
            .fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()))
            / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenmode_damping() {
        let grid = SpatialGrid::new(1.0, 15).unwrap();
        let s = DiffusionStencil::new(&grid, 0.01).unwrap();
        let pi = std::f64::consts::PI;
        let mut v: Vec<f64> = grid.nodes().iter().map(|&x| (pi * x).sin()).collect();
        let orig = v.clone();
        s.solve_in_place(&mut v);
        let factor = 1.0 / (1.0 + 0.01 * s.eigenvalue(1));
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - factor * b).abs() < 1e-14);
        }
        let mu = 4.0 * (pi * grid.h() / 2.0).sin().powi(2) / grid.h().powi(2);
        assert!((s.eigenvalue(1) - mu).abs() < 1e-12 * mu);
    }

    #[test]
    fn factorization_residual_small() {
        let grid = SpatialGrid::new(2.0, 40).unwrap();
        let s = DiffusionStencil::new(&grid, 0.3).unwrap();
        let b: Vec<f64> = (0..40).map(|j| ((j * 7 % 11) as f64) - 5.0).collect();
        assert!(s.factorization_residual(&b) <= 1e-12);
    }

    #[test]
    fn implicit_inverse_is_contractive() {
        let grid = SpatialGrid::new(1.0, 20).unwrap();
        let s = DiffusionStencil::new(&grid, 0.05).unwrap();
        let b: Vec<f64> = (0..20).map(|j| (j as f64 * 1.3).cos()).collect();
        let mut x = b.clone();
        s.solve_in_place(&mut x);
        let n2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(n2(&x) <= n2(&b));
    }
}
