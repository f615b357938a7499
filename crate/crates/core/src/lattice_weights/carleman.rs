//! Weighted space-time energies built from the Carleman weight tables.

use super::grid::{SpatialGrid, TimeGrid};
use super::weights::WeightTables;
use crate::error::{Error, Result};
use crate::noise_tree::AdaptedField;

/// Default exponent cap applied before exponentiating log weights.
pub const DEFAULT_LOG_CAP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarlemanVariant {
    /// `lambda^d theta^2 gamma^d |z|^2 + lambda^{d-2} theta^2 gamma^{d-2} |grad z|^2`.
    Standard,
    /// `theta_bar^2 ell^{-d} |z|^2 + theta_bar^2 ell^{2-d} |grad z|^2`.
    Bar,
}

/// Weighted energy of an adapted field, summed over all its components.
///
/// Time is integrated with the rectangle rule over the interior nodes
/// `t_1..t_{M-1}` (the weights vanish at both endpoints). Gradients are
/// staggered differences with zero Dirichlet values and are weighted at the
/// cell midpoints. With `lambda = 0` the powers of `lambda` are taken as one.
/// Exponents above `log_cap` are clamped; if more than `max_clamp_fraction`
/// of the evaluated terms needed clamping the call fails.
pub fn carleman_energy(
    d: i32,
    field: &AdaptedField,
    tables: &WeightTables,
    grid: &SpatialGrid,
    tgrid: &TimeGrid,
    variant: CarlemanVariant,
    log_cap: f64,
    max_clamp_fraction: f64,
) -> Result<f64> {
    let n_x = grid.n_x();
    if field.n_x() != n_x || field.n_times() != tgrid.steps() + 1 || tables.n_times() != field.n_times() {
        return Err(Error::ShapeMismatch("field, weight tables and lattice disagree".into()));
    }
    let lambda = tables.lambda;
    let log_lambda = if lambda > 0.0 { lambda.ln() } else { 0.0 };
    let h = grid.h();
    let mut total = 0.0;
    let mut clamped = 0usize;
    let mut evaluated = 0usize;

    let mut weight = |log_w: f64| -> f64 {
        evaluated += 1;
        if log_w > log_cap {
            clamped += 1;
            log_cap.exp()
        } else {
            log_w.exp()
        }
    };

    for m in 1..tgrid.steps() {
        let (log_time, log_lambda_pow) = match variant {
            CarlemanVariant::Standard => (tables.gamma[m].ln(), log_lambda),
            CarlemanVariant::Bar => (-tables.ell[m].ln(), 0.0),
        };
        let zero_order = d as f64 * (log_lambda_pow + log_time);
        let first_order = (d - 2) as f64 * (log_lambda_pow + log_time);
        let row = m * n_x;
        let mid_row = m * (n_x + 1);
        let (theta, theta_mid) = match variant {
            CarlemanVariant::Standard => (
                &tables.log_theta[row..row + n_x],
                &tables.log_theta_mid[mid_row..mid_row + n_x + 1],
            ),
            CarlemanVariant::Bar => (
                &tables.log_theta_bar[row..row + n_x],
                &tables.log_theta_bar_mid[mid_row..mid_row + n_x + 1],
            ),
        };
        let w0: Vec<f64> = theta.iter().map(|&lt| weight(2.0 * lt + zero_order)).collect();
        let w1: Vec<f64> = theta_mid.iter().map(|&lt| weight(2.0 * lt + first_order)).collect();

        let slice = field.slice(m);
        let nodes = field.nodes(m);
        let mut acc = 0.0;
        for vec in slice.chunks(n_x) {
            for j in 0..n_x {
                acc += w0[j] * vec[j] * vec[j];
            }
            for j in 0..=n_x {
                let right = if j < n_x { vec[j] } else { 0.0 };
                let left = if j > 0 { vec[j - 1] } else { 0.0 };
                let g = (right - left) / h;
                acc += w1[j] * g * g;
            }
        }
        total += tgrid.dt() * h * acc / nodes as f64;
    }

    if evaluated > 0 && clamped as f64 > max_clamp_fraction * evaluated as f64 {
        return Err(Error::ClampingExceeded {
            clamped,
            total: evaluated,
            allowed: max_clamp_fraction,
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_weights::{build_eta0, build_weight_tables, Mask, SubdomainLayout};

    fn setup(lambda: f64, mu: f64) -> (SpatialGrid, TimeGrid, WeightTables) {
        let grid = SpatialGrid::new(1.0, 9).unwrap();
        let layout = SubdomainLayout::new(
            Mask::from_intervals(&grid, &[(0.3, 0.8)]),
            vec![Mask::from_intervals(&grid, &[(0.05, 0.15)])],
            Mask::from_intervals(&grid, &[(0.3, 0.8)]),
            Mask::from_intervals(&grid, &[(0.4, 0.6)]),
        )
        .unwrap();
        let p = build_eta0(&grid, &layout, lambda, mu).unwrap();
        let t = TimeGrid::new(1.0, 2, 4).unwrap();
        let w = build_weight_tables(&p, &t);
        (grid, t, w)
    }

    fn sine_field(grid: &SpatialGrid, t: &TimeGrid) -> AdaptedField {
        let x = grid.nodes().to_vec();
        AdaptedField::from_fn(t, 1, grid.n_x(), |_, _, _, j| (std::f64::consts::PI * x[j]).sin())
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let (g, t, w) = setup(0.1, 0.5);
        let f = AdaptedField::zeros(&t, 2, g.n_x());
        for v in [CarlemanVariant::Standard, CarlemanVariant::Bar] {
            assert_eq!(carleman_energy(3, &f, &w, &g, &t, v, DEFAULT_LOG_CAP, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn sine_mode_against_direct_summation() {
        let (g, t, w) = setup(0.3, 0.5);
        let f = sine_field(&g, &t);
        let e = carleman_energy(3, &f, &w, &g, &t, CarlemanVariant::Standard, DEFAULT_LOG_CAP, 0.0).unwrap();
        // direct evaluation of the weights from their closed forms
        let (lambda, mu, horizon) = (0.3_f64, 0.5_f64, 1.0);
        let a = |x: f64| (mu * 4.0 * x * (1.0 - x)).exp() - (2.0 * mu).exp();
        let mut brute = 0.0;
        for m in 1..t.steps() {
            let tm = m as f64 * t.dt();
            let gam = 1.0 / (tm * (horizon - tm));
            for j in 0..g.n_x() {
                let x = g.nodes()[j];
                let theta2 = (2.0 * lambda * a(x) * gam).exp();
                brute += t.dt() * g.h() * lambda.powi(3) * theta2 * gam.powi(3) * f.get(m, 0, 0, j).powi(2);
            }
            for j in 0..=g.n_x() {
                let xm = (j as f64 + 0.5) * g.h();
                let right = if j < g.n_x() { f.get(m, 0, 0, j) } else { 0.0 };
                let left = if j > 0 { f.get(m, 0, 0, j - 1) } else { 0.0 };
                let theta2 = (2.0 * lambda * a(xm) * gam).exp();
                brute += t.dt() * g.h() * lambda * theta2 * gam * ((right - left) / g.h()).powi(2);
            }
        }
        assert!((e - brute).abs() <= 1e-12 * brute, "{e} vs {brute}");
    }

    #[test]
    fn lambda_zero_reduces_to_time_weighted_energy() {
        let (g, t, w) = setup(0.0, 0.5);
        let f = sine_field(&g, &t);
        let e = carleman_energy(2, &f, &w, &g, &t, CarlemanVariant::Standard, DEFAULT_LOG_CAP, 0.0).unwrap();
        let mut brute = 0.0;
        for m in 1..t.steps() {
            let tm = m as f64 * t.dt();
            let gam = 1.0 / (tm * (1.0 - tm));
            let mut l2 = 0.0;
            let mut grad = 0.0;
            for j in 0..g.n_x() {
                l2 += f.get(m, 0, 0, j).powi(2);
            }
            for j in 0..=g.n_x() {
                let right = if j < g.n_x() { f.get(m, 0, 0, j) } else { 0.0 };
                let left = if j > 0 { f.get(m, 0, 0, j - 1) } else { 0.0 };
                grad += ((right - left) / g.h()).powi(2);
            }
            brute += t.dt() * g.h() * (gam * gam * l2 + grad);
        }
        assert!((e - brute).abs() <= 1e-12 * brute);
    }

    #[test]
    fn clamping_budget_is_enforced() {
        let (g, t, w) = setup(0.1, 0.5);
        let f = sine_field(&g, &t);
        let err = carleman_energy(3, &f, &w, &g, &t, CarlemanVariant::Standard, -50.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::ClampingExceeded { .. }));
        assert!(carleman_energy(3, &f, &w, &g, &t, CarlemanVariant::Bar, -50.0, 1.0).is_ok());
    }
}
