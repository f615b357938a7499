//! Zeroth-order coupling `A = (a_ij)` sampled at the left endpoint of every
//! PDE step.

use crate::error::{Error, Result};
use crate::lattice_weights::{Mask, SpatialGrid, TimeGrid};

pub type Matrix2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingField {
    n_x: usize,
    steps: usize,
    /// `a(t_m, x_j)` at `m * n_x + j`, `m = 0..M-1`.
    values: Vec<Matrix2>,
}

impl CouplingField {
    pub fn constant(a: Matrix2, tgrid: &TimeGrid, grid: &SpatialGrid) -> Result<Self> {
        Self::from_fn(tgrid, grid, |_, _| a)
    }

    pub fn from_fn(
        tgrid: &TimeGrid,
        grid: &SpatialGrid,
        f: impl Fn(f64, f64) -> Matrix2,
    ) -> Result<Self> {
        let n_x = grid.n_x();
        let steps = tgrid.steps();
        let mut values = Vec::with_capacity(steps * n_x);
        for m in 0..steps {
            let t = tgrid.time(m);
            for &x in grid.nodes() {
                let a = f(t, x);
                if a.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "coupling coefficient not finite at t = {t}, x = {x}"
                    )));
                }
                values.push(a);
            }
        }
        Ok(Self { n_x, steps, values })
    }

    pub fn at(&self, m: usize, j: usize) -> &Matrix2 {
        &self.values[m * self.n_x + j]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// `max_{m,j} |a(t_m, x_j)|_inf` (maximum absolute row sum).
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|a| (a[0][0].abs() + a[0][1].abs()).max(a[1][0].abs() + a[1][1].abs()))
            .fold(0.0, f64::max)
    }

    /// Rejects `dt |A|_inf >= 1`.
    pub fn check_stability(&self, dt: f64) -> Result<()> {
        let s = dt * self.sup_norm();
        if s >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "explicit coupling unstable: dt * |A|_inf = {s:.4} >= 1; refine the time grid"
            )));
        }
        Ok(())
    }

    /// Requires `a_21 >= a0` or `-a_21 >= a0` on every node of `o0` at
    /// every time.
    pub fn check_sign(&self, o0: &Mask, a0: f64) -> Result<()> {
        if !(a0 > 0.0) {
            return Err(Error::InvalidParameter(format!("a0 must be positive, got {a0}")));
        }
        let on_o0 = |pred: &dyn Fn(f64) -> bool| {
            (0..self.steps).all(|m| o0.indices().all(|j| pred(self.at(m, j)[1][0])))
        };
        if on_o0(&|a21| a21 >= a0) || on_o0(&|a21| -a21 >= a0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "a21 must keep a fixed sign with |a21| >= a0 = {a0} on O_0"
            )))
        }
    }
}
