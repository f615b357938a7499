//! Carleman weight families evaluated in log space.
//!
//! With `a(x) = exp(mu eta0(x)) - exp(2 mu |eta0|_inf) <= 0` the families are
//!
//! ```text
//! gamma(t) = 1 / (t (T - t))        alpha(t, x)    = a(x) gamma(t)
//! ell(t)   = T^2/4 on [0, T/2],     alpha_bar(t,x) = a(x) / ell(t)
//!            t (T - t) on [T/2, T]
//! theta = exp(lambda alpha)         theta_bar      = exp(lambda alpha_bar)
//! rho_*(t) = exp(-lambda min_x alpha / 2)
//! rho(t)   = exp(-lambda min_x alpha_bar)
//! ```
//!
//! Every table stores logarithms. Endpoint values are the limits
//! (`gamma = +inf`, `log theta = -inf`, `log rho_* = +inf`) so that consumers
//! exponentiating `-2 log rho_*` obtain exactly zero at `t = 0` and `t = T`.

use super::grid::{SpatialGrid, SubdomainLayout, TimeGrid};
use crate::error::{Error, Result};

/// Carleman parameters and the profile `eta0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightParams {
    pub lambda: f64,
    pub mu: f64,
    /// `eta0` at the interior nodes.
    pub eta0: Vec<f64>,
    /// `eta0` at the cell midpoints `(j + 1/2) h`, `j = 0..=n_x`.
    pub eta0_mid: Vec<f64>,
    pub eta0_max: f64,
}

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_MU: f64 = 0.5;

fn parabola(x: f64, length: f64) -> f64 {
    4.0 * x * (length - x) / (length * length)
}

/// Builds `eta0(x) = 4 x (L - x) / L^2`. Its only critical point is `L/2`,
/// so the node nearest the midpoint must belong to `O_0`.
pub fn build_eta0(
    grid: &SpatialGrid,
    layout: &SubdomainLayout,
    lambda: f64,
    mu: f64,
) -> Result<WeightParams> {
    if !(lambda >= 0.0 && lambda.is_finite()) || !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda and mu must be finite and >= 0 (got {lambda}, {mu})"
        )));
    }
    let mid = grid.midpoint_index();
    if !layout.o0.contains(mid) {
        return Err(Error::InvalidLayout(format!(
            "O_0 must contain the midpoint node x = {:.6} where eta0 is critical",
            grid.nodes()[mid]
        )));
    }
    let length = grid.length();
    let h = grid.h();
    let eta0: Vec<f64> = grid.nodes().iter().map(|&x| parabola(x, length)).collect();
    let eta0_mid = (0..=grid.n_x())
        .map(|j| parabola((j as f64 + 0.5) * h, length))
        .collect();
    let params = WeightParams {
        lambda,
        mu,
        eta0,
        eta0_mid,
        eta0_max: 1.0,
    };
    debug_assert!(params.gradient_vanishes_only_in(grid, &layout.o0));
    Ok(params)
}

impl WeightParams {
    /// True when the one-sided differences of `eta0` (with zero boundary
    /// values) are nonzero at every node outside `b`.
    pub fn gradient_vanishes_only_in(&self, grid: &SpatialGrid, b: &super::Mask) -> bool {
        let n = self.eta0.len();
        let at = |j: isize| -> f64 {
            if j < 0 || j as usize >= n {
                0.0
            } else {
                self.eta0[j as usize]
            }
        };
        (0..n).filter(|&j| !b.contains(j)).all(|j| {
            let j = j as isize;
            let fwd = (at(j + 1) - at(j)) / grid.h();
            let bwd = (at(j) - at(j - 1)) / grid.h();
            fwd.abs().max(bwd.abs()) > 0.0
        })
    }

    /// `a(x) = exp(mu eta0) - exp(2 mu |eta0|_inf)` for a given `eta0` value.
    pub fn alpha_coefficient(&self, eta: f64) -> f64 {
        (self.mu * eta).exp() - (2.0 * self.mu * self.eta0_max).exp()
    }

    /// `min_x a(x) = 1 - exp(2 mu |eta0|_inf)`, attained on the boundary.
    pub fn alpha_min_coefficient(&self) -> f64 {
        1.0 - (2.0 * self.mu * self.eta0_max).exp()
    }
}

/// `coef * g` with the convention `0 * inf = 0`.
fn scaled(coef: f64, g: f64) -> f64 {
    if coef == 0.0 {
        0.0
    } else {
        coef * g
    }
}

/// Log-space weight tables on the PDE time nodes `t_m`, `m = 0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTables {
    pub lambda: f64,
    pub mu: f64,
    pub n_x: usize,
    pub times: Vec<f64>,
    pub gamma: Vec<f64>,
    pub ell: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub log_rho_star: Vec<f64>,
    pub log_rho_bar: Vec<f64>,
    /// `lambda alpha(t_m, x_j)`, row-major in `m`.
    pub log_theta: Vec<f64>,
    /// `lambda alpha_bar(t_m, x_j)`, row-major in `m`.
    pub log_theta_bar: Vec<f64>,
    /// As `log_theta` at the `n_x + 1` cell midpoints.
    pub log_theta_mid: Vec<f64>,
    pub log_theta_bar_mid: Vec<f64>,
    /// `exp(2 mu |eta0|_inf)`.
    pub peak: f64,
}

pub fn gamma_at(t: f64, horizon: f64) -> f64 {
    1.0 / (t * (horizon - t))
}

pub fn ell_at(t: f64, horizon: f64) -> f64 {
    if t <= 0.5 * horizon {
        0.25 * horizon * horizon
    } else {
        t * (horizon - t)
    }
}

/// Evaluates every weight family on the time grid. Pure and deterministic.
pub fn build_weight_tables(params: &WeightParams, tgrid: &TimeGrid) -> WeightTables {
    let horizon = tgrid.horizon();
    let n_times = tgrid.steps() + 1;
    let lambda = params.lambda;
    let times: Vec<f64> = (0..n_times).map(|m| tgrid.time(m)).collect();
    let gamma: Vec<f64> = times
        .iter()
        .map(|&t| {
            if t <= 0.0 || t >= horizon {
                f64::INFINITY
            } else {
                gamma_at(t, horizon)
            }
        })
        .collect();
    let ell: Vec<f64> = times.iter().map(|&t| ell_at(t, horizon)).collect();
    let amin = params.alpha_min_coefficient();
    let alpha_star: Vec<f64> = gamma.iter().map(|&g| scaled(amin, g)).collect();
    let log_rho_star = alpha_star.iter().map(|&a| -scaled(lambda, a) / 2.0).collect();
    let log_rho_bar = ell
        .iter()
        .map(|&l| -scaled(lambda, scaled(amin, 1.0 / l)))
        .collect();

    let coef_nodes: Vec<f64> = params.eta0.iter().map(|&e| params.alpha_coefficient(e)).collect();
    let coef_mid: Vec<f64> = params
        .eta0_mid
        .iter()
        .map(|&e| params.alpha_coefficient(e))
        .collect();
    let table = |coefs: &[f64], time_factor: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut out = Vec::with_capacity(n_times * coefs.len());
        for m in 0..n_times {
            let g = time_factor(m);
            out.extend(coefs.iter().map(|&c| scaled(lambda, scaled(c, g))));
        }
        out
    };
    let by_gamma = |m: usize| gamma[m];
    let by_ell = |m: usize| 1.0 / ell[m];
    let log_theta = table(&coef_nodes, &by_gamma);
    let log_theta_mid = table(&coef_mid, &by_gamma);
    let log_theta_bar = table(&coef_nodes, &by_ell);
    let log_theta_bar_mid = table(&coef_mid, &by_ell);

    WeightTables {
        lambda,
        mu: params.mu,
        n_x: params.eta0.len(),
        times,
        gamma,
        ell,
        alpha_star,
        log_rho_star,
        log_rho_bar,
        log_theta,
        log_theta_bar,
        log_theta_mid,
        log_theta_bar_mid,
        peak: (2.0 * params.mu * params.eta0_max).exp(),
    }
}

impl WeightTables {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn log_theta_at(&self, m: usize, j: usize) -> f64 {
        self.log_theta[m * self.n_x + j]
    }

    pub fn log_theta_bar_at(&self, m: usize, j: usize) -> f64 {
        self.log_theta_bar[m * self.n_x + j]
    }

    /// `min` over interior time nodes of `rho_*`.
    pub fn rho0(&self) -> f64 {
        let n = self.n_times();
        self.log_rho_star[1..n - 1]
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .exp()
    }

    /// Checks `rho_*^{-4} <= theta_bar^2` at every time node and every
    /// spatial node, i.e. `-4 log rho_* <= 2 lambda alpha_bar(t, x)`.
    pub fn rho_star_below_theta_bar(&self) -> bool {
        (0..self.n_times()).all(|m| {
            let lhs = -4.0 * self.log_rho_star[m];
            // at t = 0 and t = T the left side is exp(-inf) = 0
            lhs == f64::NEG_INFINITY
                || (0..self.n_x).all(|j| lhs <= 2.0 * self.log_theta_bar_at(m, j) + 1e-12 * lhs.abs())
        })
    }
}

/// Empirical constants of the elementary weight bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    /// `min gamma`.
    pub c1: f64,
    /// `max |gamma'| / gamma^2`.
    pub c2: f64,
    /// `max |gamma''| / gamma^3`.
    pub c3: f64,
    /// `max |alpha_t| / (e^{2 mu |eta0|} gamma^2)`.
    pub c4: f64,
    /// `max |alpha_tt| / (e^{2 mu |eta0|} gamma^3)`.
    pub c5: f64,
}

impl InequalityReport {
    pub fn passes(&self) -> bool {
        [self.c1, self.c2, self.c3, self.c4, self.c5]
            .iter()
            .all(|c| c.is_finite())
    }

    pub const CSV_HEADER: &'static str = "c1_min_gamma,c2_dgamma,c3_ddgamma,c4_dalpha,c5_ddalpha,passes";
}

/// Centered finite differences on the interior nodes `m = 2..=M-2`.
pub fn check_weight_inequalities(tables: &WeightTables, tgrid: &TimeGrid) -> Result<InequalityReport> {
    let steps = tgrid.steps();
    if steps < 8 {
        return Err(Error::InvalidLattice(format!(
            "weight inequality check needs at least 8 time steps, got {steps}"
        )));
    }
    let dt = tgrid.dt();
    let g = &tables.gamma;
    let c1 = g[1..steps].iter().cloned().fold(f64::INFINITY, f64::min);
    let mut c2: f64 = 0.0;
    let mut c3: f64 = 0.0;
    let mut c4: f64 = 0.0;
    let mut c5: f64 = 0.0;
    let n_x = tables.n_x;
    let lambda = tables.lambda;
    for m in 2..=steps - 2 {
        let d1 = (g[m + 1] - g[m - 1]) / (2.0 * dt);
        let d2 = (g[m + 1] - 2.0 * g[m] + g[m - 1]) / (dt * dt);
        c2 = c2.max(d1.abs() / (g[m] * g[m]));
        c3 = c3.max(d2.abs() / (g[m] * g[m] * g[m]));
        for j in 0..n_x {
            // alpha = log_theta / lambda; with lambda = 0 rebuild from alpha_star scaling
            let alpha = |k: usize| -> f64 {
                if lambda > 0.0 {
                    tables.log_theta_at(k, j) / lambda
                } else {
                    0.0
                }
            };
            let a1 = (alpha(m + 1) - alpha(m - 1)) / (2.0 * dt);
            let a2 = (alpha(m + 1) - 2.0 * alpha(m) + alpha(m - 1)) / (dt * dt);
            c4 = c4.max(a1.abs() / (tables.peak * g[m] * g[m]));
            c5 = c5.max(a2.abs() / (tables.peak * g[m] * g[m] * g[m]));
        }
    }
    Ok(InequalityReport { c1, c2, c3, c4, c5 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_weights::Mask;

    fn layout(grid: &SpatialGrid, o0: (f64, f64)) -> SubdomainLayout {
        SubdomainLayout::new(
            Mask::from_intervals(grid, &[(0.3, 0.8)]),
            vec![Mask::from_intervals(grid, &[(0.05, 0.15)])],
            Mask::from_intervals(grid, &[(0.3, 0.8)]),
            Mask::from_intervals(grid, &[o0]),
        )
        .unwrap()
    }

    #[test]
    fn eta0_closed_form() {
        let grid = SpatialGrid::new(1.0, 9).unwrap();
        let p = build_eta0(&grid, &layout(&grid, (0.4, 0.6)), 0.1, 0.5).unwrap();
        assert!((p.eta0[4] - 1.0).abs() < 1e-15);
        assert!((p.eta0[0] - 0.36).abs() < 1e-15);
        assert!(p.eta0.iter().all(|&e| e > 0.0));
        assert!(p.gradient_vanishes_only_in(&grid, &layout(&grid, (0.4, 0.6)).o0));
    }

    #[test]
    fn eta0_rejects_off_center_o0() {
        let grid = SpatialGrid::new(1.0, 9).unwrap();
        let err = build_eta0(&grid, &layout(&grid, (0.7, 0.8)), 0.1, 0.5).unwrap_err();
        assert!(matches!(err, Error::InvalidLayout(_)));
    }

    #[test]
    fn eta0_peaks_at_midpoint_for_longer_domain() {
        let grid = SpatialGrid::new(2.0, 9).unwrap();
        let lay = SubdomainLayout::new(
            Mask::from_intervals(&grid, &[(0.6, 1.6)]),
            vec![Mask::from_intervals(&grid, &[(0.1, 0.3)])],
            Mask::from_intervals(&grid, &[(0.6, 1.6)]),
            Mask::from_intervals(&grid, &[(0.8, 1.2)]),
        )
        .unwrap();
        let p = build_eta0(&grid, &lay, 0.1, 0.5).unwrap();
        assert!((grid.nodes()[4] - 1.0).abs() < 1e-15);
        assert!((p.eta0[4] - 1.0).abs() < 1e-15);
    }

    fn tables(lambda: f64, mu: f64, steps: usize) -> (WeightTables, TimeGrid) {
        let grid = SpatialGrid::new(1.0, 9).unwrap();
        let p = build_eta0(&grid, &layout(&grid, (0.4, 0.6)), lambda, mu).unwrap();
        let t = TimeGrid::new(1.0, steps, 1).unwrap();
        (build_weight_tables(&p, &t), t)
    }

    #[test]
    fn midpoint_values() {
        let (w, _) = tables(0.1, 0.5, 4);
        assert_eq!(w.gamma[2], 4.0);
        assert_eq!(w.ell[2], 0.25);
        let expected = 0.2 * (std::f64::consts::E - 1.0);
        assert!((w.log_rho_star[2] - expected).abs() < 1e-15);
        assert!((w.log_rho_star[2] - 0.34366).abs() < 1e-5);
    }

    #[test]
    fn mu_zero_collapses_weights() {
        let (w, t) = tables(0.1, 0.0, 8);
        assert!(w.alpha_star.iter().all(|&a| a == 0.0));
        assert!(w.log_rho_star.iter().all(|&l| l == 0.0));
        assert_eq!(w.rho0(), 1.0);
        let r = check_weight_inequalities(&w, &t).unwrap();
        assert_eq!(r.c4, 0.0);
        assert_eq!(r.c5, 0.0);
    }

    #[test]
    fn endpoint_conventions() {
        let (w, _) = tables(0.1, 0.5, 4);
        assert_eq!(w.log_rho_star[0], f64::INFINITY);
        assert_eq!(w.log_rho_star[4], f64::INFINITY);
        assert_eq!((-2.0 * w.log_rho_star[0]).exp(), 0.0);
        assert!(w.log_rho_bar[0].is_finite());
        assert_eq!(w.log_rho_bar[4], f64::INFINITY);
        assert_eq!(w.log_theta_at(0, 3), f64::NEG_INFINITY);
    }

    #[test]
    fn inequality_report() {
        let (w, t) = tables(0.1, 0.5, 16);
        let r = check_weight_inequalities(&w, &t).unwrap();
        assert_eq!(r.c1, 4.0);
        assert!(r.passes());
        let (w, t) = tables(0.1, 0.5, 4);
        assert!(check_weight_inequalities(&w, &t).is_err());
    }

    #[test]
    fn rho_star_monotone_toward_endpoints() {
        let (w, _) = tables(0.1, 0.5, 16);
        for m in 1..8 {
            assert!(w.log_rho_star[m] > w.log_rho_star[m + 1]);
        }
        for m in 8..15 {
            assert!(w.log_rho_star[m] < w.log_rho_star[m + 1]);
        }
        for m in 0..8 {
            assert_eq!(w.log_rho_bar[m], w.log_rho_bar[8]);
        }
        for m in 8..15 {
            assert!(w.log_rho_bar[m] < w.log_rho_bar[m + 1]);
        }
        assert!(w.rho_star_below_theta_bar());
    }

    #[test]
    fn tables_are_deterministic() {
        let (a, _) = tables(0.3, 0.7, 12);
        let (b, _) = tables(0.3, 0.7, 12);
        assert_eq!(a, b);
    }
}
