//! Leader synthesis by penalised HUM.
//!
//! The Gramian maps adjoint terminal data `phi_T` to the terminal state of
//! the closed loop (zero initial state, zero targets) driven by the leaders
//! `(chi_G0 phi_1, Phi_1, Phi_2)` read off the coupled adjoint system. The
//! leader problem minimises
//! `1/2 <G phi, phi> + eps/2 |phi|^2 + <y_free(T), phi>`, i.e. solves
//! `(G + eps I) phi = -y_free(T)` by conjugate gradients in the terminal
//! inner product. At the solution `y(T) = -eps phi`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::noise_tree::{expect_spacetime_inner, level_inner, AdaptedField};
use crate::parabolic_core::N_COMP;
use crate::systems::{
    evaluate_functionals, solve_coupled_adjoint, solve_optimality_system, CoupledAdjointSolution,
    FollowerControls, GameSpec, LeaderControls, Scenario,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumParams {
    pub epsilon: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl HumParams {
    pub fn new(epsilon: f64, cg_tol: f64, cg_max_iter: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(cg_tol > 0.0 && cg_tol <= 1e-2) {
            return Err(Error::InvalidParameter(format!("cg_tol must lie in (0, 1e-2], got {cg_tol}")));
        }
        Ok(Self {
            epsilon,
            cg_tol,
            cg_max_iter,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumSolution {
    pub phi_t: Vec<f64>,
    pub leaders: LeaderControls,
    pub followers: FollowerControls,
    pub state: AdaptedField,
    /// `|y(T)|` in the terminal norm.
    pub terminal_norm: f64,
    /// `|y_free(T)|`, the right-hand side scale.
    pub free_terminal_norm: f64,
    pub j_value: f64,
    pub cg_iterations: usize,
    /// `|y(T) + eps phi_T|`.
    pub identity_residual: f64,
}

/// Terminal inner product `E <a, b>` on level-`K` slices.
pub fn terminal_inner(spec: &GameSpec, a: &[f64], b: &[f64]) -> f64 {
    let lat = spec.lattice();
    let nodes = a.len() / (N_COMP * lat.n_x());
    level_inner(a, b, nodes, lat.h())
}

pub fn terminal_norm(spec: &GameSpec, a: &[f64]) -> f64 {
    terminal_inner(spec, a, a).sqrt()
}

/// Leaders `(chi_G0 phi_1, Phi_1, Phi_2)` of an adjoint solution, with
/// `phi_1` taken as the drift-pairing field of the discrete backward step.
pub fn leaders_from_adjoint(spec: &GameSpec, adj: &CoupledAdjointSolution) -> LeaderControls {
    LeaderControls {
        u1: adj.phi.pairing.component(0).masked(&spec.layout.g0),
        u2: adj.phi.martingale.component(0),
        u3: adj.phi.martingale.component(1),
    }
}

/// Gramian of the closed loop, with targets removed.
#[derive(Debug, Clone)]
pub struct Gramian {
    spec: GameSpec,
    zero_state: Vec<f64>,
}

impl Gramian {
    pub fn new(spec: &GameSpec) -> Self {
        let n = N_COMP * spec.lattice().n_x();
        Self {
            spec: spec.without_targets(),
            zero_state: vec![0.0; n],
        }
    }

    pub fn apply(&self, phi_t: &[f64]) -> Result<Vec<f64>> {
        let adj = solve_coupled_adjoint(&self.spec, phi_t)?;
        let leaders = leaders_from_adjoint(&self.spec, &adj);
        let opt = solve_optimality_system(&self.spec, &self.zero_state, &leaders)?;
        Ok(opt.state.terminal().to_vec())
    }
}

/// `G phi_T`.
pub fn gramian_apply(spec: &GameSpec, phi_t: &[f64]) -> Result<Vec<f64>> {
    Gramian::new(spec).apply(phi_t)
}

/// Terminal state of the closed loop without leaders.
pub fn free_terminal_state(spec: &GameSpec, y0: &[f64]) -> Result<Vec<f64>> {
    let leaders = LeaderControls::zeros(spec.lattice());
    Ok(solve_optimality_system(spec, y0, &leaders)?.state.terminal().to_vec())
}

const STAGNATION_WINDOW: usize = 50;

/// Conjugate gradients for `(G + eps I) x = rhs` in the terminal inner
/// product. Returns the solution and the iteration count.
pub fn conjugate_gradient(
    spec: &GameSpec,
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    params: &HumParams,
) -> Result<(Vec<f64>, usize)> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let b_norm = terminal_norm(spec, rhs);
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = terminal_inner(spec, &r, &r);
    let mut checkpoint = rr.sqrt();
    for it in 1..=params.cg_max_iter {
        let mut ap = apply(&p)?;
        for (a, pi) in ap.iter_mut().zip(&p) {
            *a += params.epsilon * pi;
        }
        let pap = terminal_inner(spec, &p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CgStagnation {
                iteration: it,
                residual: rr.sqrt() / b_norm,
            });
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_new = terminal_inner(spec, &r, &r);
        if rr_new.sqrt() <= params.cg_tol * b_norm {
            return Ok((x, it));
        }
        if it % STAGNATION_WINDOW == 0 {
            if rr_new.sqrt() > 0.1 * checkpoint {
                return Err(Error::CgStagnation {
                    iteration: it,
                    residual: rr_new.sqrt() / b_norm,
                });
            }
            checkpoint = rr_new.sqrt();
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(Error::CgStagnation {
        iteration: params.cg_max_iter,
        residual: rr.sqrt() / b_norm,
    })
}

/// Closes the loop for given terminal adjoint data: leaders, closed-loop
/// state and followers, and the summary norms.
pub fn evaluate_leader(
    spec: &GameSpec,
    y0: &[f64],
    phi_t: Vec<f64>,
    epsilon: f64,
    cg_iterations: usize,
    free_terminal_norm: f64,
) -> Result<HumSolution> {
    let adj = solve_coupled_adjoint(spec, &phi_t)?;
    let leaders = leaders_from_adjoint(spec, &adj);
    let opt = solve_optimality_system(spec, y0, &leaders)?;
    let followers = crate::systems::feedback_controls(spec, &opt.adjoints);
    let y_t = opt.state.terminal();
    let residual: Vec<f64> = y_t.iter().zip(&phi_t).map(|(y, p)| y + epsilon * p).collect();
    let j_value = evaluate_functionals(spec, &leaders, &followers, &opt.state)?.leader;
    Ok(HumSolution {
        terminal_norm: terminal_norm(spec, y_t),
        identity_residual: terminal_norm(spec, &residual),
        phi_t,
        leaders,
        followers,
        state: opt.state,
        free_terminal_norm,
        j_value,
        cg_iterations,
    })
}

pub fn solve_leader(spec: &GameSpec, y0: &[f64], params: &HumParams) -> Result<HumSolution> {
    let gramian = Gramian::new(spec);
    let free = free_terminal_state(spec, y0)?;
    let rhs: Vec<f64> = free.iter().map(|v| -v).collect();
    let (phi_t, iterations) = conjugate_gradient(spec, |p| gramian.apply(p), &rhs, params)?;
    evaluate_leader(spec, y0, phi_t, params.epsilon, iterations, terminal_norm(spec, &free))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub terminal_norm: f64,
    pub u1_norm: f64,
    pub u2_norm: f64,
    pub u3_norm: f64,
    pub j_value: f64,
    pub identity_residual: f64,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log |y(T)|` against `log eps` (NaN when a
    /// terminal norm vanishes).
    pub slope: f64,
    /// Largest control energy `2 J` across the sweep.
    pub max_control: f64,
    /// Largest over smallest control energy (1 when all vanish).
    pub control_ratio: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "epsilon,terminal_norm,u1_norm,u2_norm,u3_norm,J,identity_residual,cg_iterations";

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn epsilon_sweep(
    spec: &GameSpec,
    y0: &[f64],
    epsilons: &[f64],
    cg_tol: f64,
    cg_max_iter: usize,
) -> Result<SweepReport> {
    if epsilons.len() < 3 || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(
            "epsilon sweep needs at least 3 strictly decreasing values".into(),
        ));
    }
    let lat = spec.lattice();
    let (g, t) = (&lat.grid, &lat.time);
    let gramian = Gramian::new(spec);
    let free = free_terminal_state(spec, y0)?;
    let rhs: Vec<f64> = free.iter().map(|v| -v).collect();
    let free_norm = terminal_norm(spec, &free);
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let params = HumParams::new(eps, cg_tol, cg_max_iter)?;
        let (phi_t, it) = conjugate_gradient(spec, |p| gramian.apply(p), &rhs, &params)?;
        let sol = evaluate_leader(spec, y0, phi_t, eps, it, free_norm)?;
        let norm = |f: &AdaptedField, mask| -> Result<f64> {
            Ok(expect_spacetime_inner(f, f, g, t, mask, None)?.sqrt())
        };
        rows.push(SweepRow {
            epsilon: eps,
            terminal_norm: sol.terminal_norm,
            u1_norm: norm(&sol.leaders.u1, Some(&spec.layout.g0))?,
            u2_norm: norm(&sol.leaders.u2, None)?,
            u3_norm: norm(&sol.leaders.u3, None)?,
            j_value: sol.j_value,
            identity_residual: sol.identity_residual,
            cg_iterations: it,
        });
    }
    let slope = if rows.iter().all(|r| r.terminal_norm > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.terminal_norm.ln()).collect();
        fit_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    let energies: Vec<f64> = rows.iter().map(|r| 2.0 * r.j_value).collect();
    let max_control = energies.iter().cloned().fold(0.0, f64::max);
    let min_control = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let control_ratio = if max_control == 0.0 {
        1.0
    } else if min_control > 0.0 {
        max_control / min_control
    } else {
        f64::INFINITY
    };
    Ok(SweepReport {
        rows,
        slope,
        max_control,
        control_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservabilityMode {
    Sampled,
    Dense,
}

impl ObservabilityMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Self::Sampled),
            "dense" => Ok(Self::Dense),
            other => Err(Error::InvalidParameter(format!("unknown observability mode '{other}'"))),
        }
    }
}

/// Both sides of the observability inequality for one adjoint datum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilitySample {
    /// `E|phi(0)|^2 + sum_i E sum dt w |psi^i|^2` with `w = 1` (full
    /// observation) or `w = rho^{-2}` (second component).
    pub lhs: f64,
    /// `E sum dt (chi_G0 |phi_1|^2 + |Phi_1|^2 + |Phi_2|^2)`.
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub max_ratio: f64,
    /// Dense mode: smallest eigenvalue of the Gramian. Sampled mode: the
    /// smallest Rayleigh quotient over the probes (an upper bound).
    pub min_gramian_eig: f64,
    pub samples: Vec<ObservabilitySample>,
    /// Probes whose observation vanished numerically.
    pub flagged: usize,
}

fn observation_weights(spec: &GameSpec) -> Vec<f64> {
    match spec.scenario {
        Scenario::FullObservation => vec![1.0; spec.lattice().steps() + 1],
        Scenario::SecondComponent => spec.weights.log_rho_bar.iter().map(|l| (-2.0 * l).exp()).collect(),
    }
}

pub fn observability_sample(spec: &GameSpec, phi_t: &[f64]) -> Result<ObservabilitySample> {
    if phi_t.iter().all(|&v| v == 0.0) {
        return Err(Error::Observability("zero adjoint datum is not an admissible probe".into()));
    }
    let lat = spec.lattice();
    let (g, t) = (&lat.grid, &lat.time);
    let adj = solve_coupled_adjoint(spec, phi_t)?;
    let phi0 = adj.phi.value.slice(0);
    let weights = observation_weights(spec);
    let mut lhs = level_inner(phi0, phi0, 1, lat.h());
    for psi in &adj.psi {
        lhs += expect_spacetime_inner(psi, psi, g, t, None, Some(&weights))?;
    }
    let leaders = leaders_from_adjoint(spec, &adj);
    let rhs = expect_spacetime_inner(&leaders.u1, &leaders.u1, g, t, Some(&spec.layout.g0), None)?
        + expect_spacetime_inner(&leaders.u2, &leaders.u2, g, t, None, None)?
        + expect_spacetime_inner(&leaders.u3, &leaders.u3, g, t, None, None)?;
    Ok(ObservabilitySample { lhs, rhs })
}

/// Ratio of the two sides of the observability inequality, by random
/// probes or, on small lattices, by a dense generalised eigensolve.
pub fn observability_rayleigh(
    spec: &GameSpec,
    n_probes: usize,
    mode: ObservabilityMode,
    seed: u64,
) -> Result<ObservabilityReport> {
    match mode {
        ObservabilityMode::Sampled => observability_sampled(spec, n_probes, seed),
        ObservabilityMode::Dense => observability_dense(spec),
    }
}

fn is_numerically_zero(rhs: f64, probe_norm_sq: f64) -> bool {
    !(rhs > 1e-15 * probe_norm_sq)
}

fn observability_sampled(spec: &GameSpec, n_probes: usize, seed: u64) -> Result<ObservabilityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.lattice().zeros(N_COMP).terminal().len();
    let mut samples = Vec::with_capacity(n_probes);
    let mut flagged = 0;
    let mut max_ratio: f64 = 0.0;
    let mut min_rq = f64::INFINITY;
    for _ in 0..n_probes {
        let phi: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = observability_sample(spec, &phi)?;
        let nsq = terminal_inner(spec, &phi, &phi);
        if is_numerically_zero(s.rhs, nsq) {
            flagged += 1;
            max_ratio = f64::INFINITY;
        } else {
            max_ratio = max_ratio.max(s.lhs / s.rhs);
        }
        min_rq = min_rq.min(s.rhs / nsq);
        samples.push(s);
    }
    Ok(ObservabilityReport {
        max_ratio,
        min_gramian_eig: min_rq,
        samples,
        flagged,
    })
}

/// Dense mode is limited to these lattice sizes.
pub const DENSE_MAX_NX: usize = 9;
pub const DENSE_MAX_LEVELS: usize = 3;

fn observability_dense(spec: &GameSpec) -> Result<ObservabilityReport> {
    let lat = spec.lattice();
    if lat.n_x() > DENSE_MAX_NX || lat.time.noise_steps() > DENSE_MAX_LEVELS {
        return Err(Error::DimensionCap {
            dim: lat.zeros(N_COMP).terminal().len(),
            cap: N_COMP * DENSE_MAX_NX * (1 << DENSE_MAX_LEVELS),
        });
    }
    let n = lat.zeros(N_COMP).terminal().len();
    let weights = observation_weights(spec);
    // Feature maps phi_T -> (observed quantities) in coordinates that are
    // orthonormal for the respective quadratures; Gram matrices follow.
    let unit = 1.0 / (lat.h() / (n / (N_COMP * lat.n_x())) as f64).sqrt();
    let mut lhs_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut rhs_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut phi = vec![0.0; n];
        phi[k] = unit;
        let adj = solve_coupled_adjoint(spec, &phi)?;
        let leaders = leaders_from_adjoint(spec, &adj);
        let mut lf = Vec::new();
        let phi0 = adj.phi.value.slice(0);
        lf.extend(phi0.iter().map(|v| v * lat.h().sqrt()));
        for psi in &adj.psi {
            push_features(&mut lf, psi, lat.dt(), lat.h(), Some(&weights), None);
        }
        let mut rf = Vec::new();
        push_features(&mut rf, &leaders.u1, lat.dt(), lat.h(), None, Some(&spec.layout.g0));
        push_features(&mut rf, &leaders.u2, lat.dt(), lat.h(), None, None);
        push_features(&mut rf, &leaders.u3, lat.dt(), lat.h(), None, None);
        lhs_cols.push(lf);
        rhs_cols.push(rf);
    }
    let to_matrix = |cols: &[Vec<f64>]| {
        let rows = cols[0].len();
        DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
    };
    let fl = to_matrix(&lhs_cols);
    let fr = to_matrix(&rhs_cols);
    let lhs = fl.transpose() * &fl;
    let rhs = fr.transpose() * &fr;
    let eig = SymmetricEigen::new(rhs.clone());
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let max_ratio = if min_eig > 1e-14 * max_eig {
        let chol = rhs
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Observability("Gramian is not positive definite".into()))?;
        let l_inv = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
        let sym = &l_inv * &lhs * l_inv.transpose();
        let sym = (&sym + sym.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.iter().cloned().fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(ObservabilityReport {
        max_ratio,
        min_gramian_eig: min_eig,
        samples: Vec::new(),
        flagged: usize::from(!max_ratio.is_finite()),
    })
}

/// Appends `sqrt(dt h w_m 2^-k) f` for `m < M` (masked), so that the
/// squared Euclidean norm of the features is the space-time quadrature.
fn push_features(
    out: &mut Vec<f64>,
    f: &AdaptedField,
    dt: f64,
    h: f64,
    time_weight: Option<&[f64]>,
    mask: Option<&crate::lattice_weights::Mask>,
) {
    let n_x = f.n_x();
    for m in 0..f.n_times() - 1 {
        let w = time_weight.map_or(1.0, |w| w[m]);
        let scale = (dt * h * w / f.nodes(m) as f64).sqrt();
        for (idx, v) in f.slice(m).iter().enumerate() {
            let on = mask.is_none_or(|mk| mk.contains(idx % n_x));
            out.push(if on { scale * v } else { 0.0 });
        }
    }
}
