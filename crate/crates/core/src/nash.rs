//! Follower Nash equilibrium for fixed leader controls.
//!
//! The equilibrium is the zero of the gradient fields
//! `r_i = w_1^{z_i} + beta_i c v_i` on `G_i`, where `z_i` is the follower
//! adjoint driven by the tracking error and `c` the control cost weight.
//! Two iterative routes are provided: a Jacobi-type fixed point on the
//! decomposition `y = q + sum_j Lambda_j v_j` and the closed-loop
//! optimality system.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::noise_tree::{expect_spacetime_inner, level_inner, AdaptedField};
use crate::parabolic_core::{SourceKind, SourceSpec, N_COMP};
use crate::picard::iterate;
use crate::systems::{
    feedback_controls, scale_components, solve_follower_adjoint, solve_optimality_system,
    solve_state, FollowerControls, GameSpec, LeaderControls,
};

pub const DEFAULT_NASH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NashMethod {
    FixedPoint,
    AdjointCharacterization,
    DenseOracle,
}

impl NashMethod {
    pub fn name(self) -> &'static str {
        match self {
            NashMethod::FixedPoint => "fixed_point",
            NashMethod::AdjointCharacterization => "adjoint_characterization",
            NashMethod::DenseOracle => "dense_oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashSolution {
    pub v_star: FollowerControls,
    /// Scaled gradient norms, one per follower.
    pub residuals: Vec<f64>,
    pub method: NashMethod,
    pub iterations: usize,
    pub contraction: f64,
}

/// `sqrt(sum dt E h f^2)` over the nodes of `mask` (all nodes if `None`).
fn field_norm(spec: &GameSpec, f: &AdaptedField, mask: Option<&crate::lattice_weights::Mask>) -> Result<f64> {
    let lat = spec.lattice();
    Ok(expect_spacetime_inner(f, f, &lat.grid, &lat.time, mask, None)?.sqrt())
}

/// `1 + |targets| + |y0| + |leaders|`, each in its natural `L^2` norm.
pub fn problem_scale(spec: &GameSpec, y0: &[f64], leaders: &LeaderControls) -> Result<f64> {
    let lat = spec.lattice();
    let mut s = 1.0 + level_inner(y0, y0, 1, lat.h()).sqrt();
    for t in &spec.targets {
        s += field_norm(spec, t, Some(&spec.layout.observation))?;
    }
    s += field_norm(spec, &leaders.u1, Some(&spec.layout.g0))?;
    s += field_norm(spec, &leaders.u2, None)?;
    s += field_norm(spec, &leaders.u3, None)?;
    Ok(s)
}

/// Zeroes `f` at frozen time indices and at `t_M`.
fn restrict_to_controls(spec: &GameSpec, f: &mut AdaptedField) {
    let steps = spec.lattice().steps();
    for m in 0..=steps {
        if m == steps || spec.is_frozen(m) {
            f.clear_slice(m);
        }
    }
}

/// Riesz representatives `r_i = (w_1^{z_i} + beta_i c v_i) chi_{G_i}` of the
/// partial derivatives of the follower functionals, in the unweighted
/// `sum dt E h` inner product. Entries at frozen times are zero.
pub fn gradient_fields(
    spec: &GameSpec,
    y0: &[f64],
    leaders: &LeaderControls,
    followers: &FollowerControls,
) -> Result<Vec<AdaptedField>> {
    let y = solve_state(spec, y0, leaders, followers)?;
    let z = solve_follower_adjoint(spec, &y)?;
    let cost = spec.cost_weights();
    let mut out = Vec::with_capacity(z.len());
    for (i, zi) in z.iter().enumerate() {
        let mut r = zi.pairing.component(0);
        let v = &followers.v[i];
        for m in 0..r.n_times() {
            if spec.is_frozen(m) {
                continue;
            }
            let bc = spec.beta[i] * cost[m];
            for (a, b) in r.slice_mut(m).iter_mut().zip(v.slice(m)) {
                *a += bc * b;
            }
        }
        let mut r = r.masked(&spec.layout.followers[i]);
        restrict_to_controls(spec, &mut r);
        out.push(r);
    }
    Ok(out)
}

/// Per-follower gradient norms divided by [`problem_scale`].
pub fn nash_residual(
    spec: &GameSpec,
    y0: &[f64],
    leaders: &LeaderControls,
    followers: &FollowerControls,
) -> Result<Vec<f64>> {
    let scale = problem_scale(spec, y0, leaders)?;
    gradient_fields(spec, y0, leaders, followers)?
        .iter()
        .map(|r| Ok(field_norm(spec, r, None)? / scale))
        .collect()
}

/// `Lambda_j v_j`: the state driven by `v_j chi_{G_j}` alone.
pub fn apply_lambda(spec: &GameSpec, j: usize, v: &AdaptedField) -> Result<AdaptedField> {
    let lat = spec.lattice();
    let mut src = SourceSpec::zero();
    src.add_localized(lat, SourceKind::Drift, 0, Some(&spec.layout.followers[j]), v, 1.0);
    spec.propagator().forward_sweep(&vec![0.0; N_COMP * lat.n_x()], &src)
}

/// `Lambda_i^* e` restricted to `G_i`: the Riesz representative of
/// `v -> E sum dt <e, Lambda_i v>_{O_d}` over the observed components.
pub fn apply_lambda_adjoint(spec: &GameSpec, i: usize, e: &AdaptedField) -> Result<AdaptedField> {
    let mut f = scale_components(&e.masked(&spec.layout.observation), spec.scenario.observed());
    // with source -e the pairing field represents +<e, Lambda_i v>
    f.scale(-1.0);
    let zero = vec![0.0; e.terminal().len()];
    let back = spec.propagator().backward_sweep(&zero, Some(&f))?;
    let mut out = back.pairing.component(0).masked(&spec.layout.followers[i]);
    restrict_to_controls(spec, &mut out);
    Ok(out)
}

/// Jacobi fixed point
/// `v_i <- -(alpha_i / (beta_i c)) Lambda_i^*(sum_j Lambda_j v_j + q - y_d^i)`.
pub fn solve_nash_fixed_point(spec: &GameSpec, y0: &[f64], leaders: &LeaderControls) -> Result<NashSolution> {
    let lat = spec.lattice();
    let m = spec.follower_count();
    let q = solve_state(spec, y0, leaders, &FollowerControls::zeros(lat, m))?;
    let inv_cost = spec.inverse_cost_weights();
    let start: Vec<AdaptedField> = (0..m).map(|_| lat.zeros(1)).collect();
    let outcome = iterate(&spec.picard, "Nash fixed point", start, |v| {
        let mut y = q.clone();
        for (j, vj) in v.iter().enumerate() {
            y.axpy(1.0, &apply_lambda(spec, j, vj)?);
        }
        (0..m)
            .map(|i| {
                let mut e = y.clone();
                e.axpy(-1.0, &spec.targets[i]);
                let mut g = apply_lambda_adjoint(spec, i, &e)?;
                for k in 0..g.n_times() {
                    let c = -spec.alpha[i] * inv_cost[k] / spec.beta[i];
                    g.slice_mut(k).iter_mut().for_each(|x| *x *= c);
                }
                Ok(g)
            })
            .collect()
    })?;
    let v_star = FollowerControls { v: outcome.fields };
    let residuals = nash_residual(spec, y0, leaders, &v_star)?;
    Ok(NashSolution {
        v_star,
        residuals,
        method: NashMethod::FixedPoint,
        iterations: outcome.iterations,
        contraction: outcome.contraction,
    })
}

/// Reads the equilibrium off the feedback law of the optimality system.
pub fn nash_from_adjoint(spec: &GameSpec, y0: &[f64], leaders: &LeaderControls) -> Result<NashSolution> {
    let opt = solve_optimality_system(spec, y0, leaders)?;
    let v_star = feedback_controls(spec, &opt.adjoints);
    let residuals = nash_residual(spec, y0, leaders, &v_star)?;
    Ok(NashSolution {
        v_star,
        residuals,
        method: NashMethod::AdjointCharacterization,
        iterations: opt.iterations,
        contraction: opt.contraction,
    })
}

/// Largest relative difference `max_i |a_i - b_i| / max(|a|, |b|, tiny)` in
/// the `sum dt E h` norm.
pub fn relative_difference(spec: &GameSpec, a: &FollowerControls, b: &FollowerControls) -> Result<f64> {
    let mut diff_sq = 0.0;
    let mut scale_sq: f64 = 0.0;
    for (x, y) in a.v.iter().zip(&b.v) {
        let mut d = x.clone();
        d.axpy(-1.0, y);
        diff_sq += field_norm(spec, &d, None)?.powi(2);
        scale_sq = scale_sq.max(field_norm(spec, x, None)?.powi(2)).max(field_norm(spec, y, None)?.powi(2));
    }
    if scale_sq == 0.0 {
        return Ok(diff_sq.sqrt());
    }
    Ok((diff_sq / scale_sq).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityEstimate {
    /// `min rho_*` over the interior time nodes.
    pub rho0: f64,
    /// Minimum of `<L v, v>` over unit random probes.
    pub lower_bound: f64,
}

/// Random follower tuple supported on the control dofs, unit norm.
pub fn random_follower_probe(spec: &GameSpec, rng: &mut ChaCha8Rng) -> Result<FollowerControls> {
    let lat = spec.lattice();
    let mut v = FollowerControls::zeros(lat, spec.follower_count());
    for (i, f) in v.v.iter_mut().enumerate() {
        f.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
        *f = f.masked(&spec.layout.followers[i]);
        restrict_to_controls(spec, f);
    }
    let norm: f64 = v
        .v
        .iter()
        .map(|f| field_norm(spec, f, None).map(|n| n * n))
        .sum::<Result<f64>>()?
        .sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidLayout("follower regions hold no control unknowns".into()));
    }
    v.v.iter_mut().for_each(|f| f.scale(1.0 / norm));
    Ok(v)
}

/// `<L v, v> = sum_i alpha_i <sum_j Lambda_j v_j, Lambda_i v_i>_{O_d}
/// + beta_i <c v_i, v_i>`, evaluated without assembling `L`.
pub fn nash_quadratic_form(spec: &GameSpec, v: &FollowerControls) -> Result<f64> {
    let lat = spec.lattice();
    let (g, t) = (&lat.grid, &lat.time);
    let lambdas: Vec<AdaptedField> = v
        .v
        .iter()
        .enumerate()
        .map(|(j, vj)| apply_lambda(spec, j, vj))
        .collect::<Result<_>>()?;
    let mut total = lat.zeros(N_COMP);
    for l in &lambdas {
        total.axpy(1.0, l);
    }
    let total = scale_components(&total, spec.scenario.observed());
    let mut q = 0.0;
    for (i, li) in lambdas.iter().enumerate() {
        q += spec.alpha[i] * expect_spacetime_inner(&total, li, g, t, Some(&spec.layout.observation), None)?;
        q += spec.beta[i]
            * expect_spacetime_inner(&v.v[i], &v.v[i], g, t, None, Some(spec.cost_weights()))?;
    }
    Ok(q)
}

/// Minimum of the quadratic form of `L` over `n_probes` random unit probes
/// drawn from `seed`.
pub fn coercivity_estimate(spec: &GameSpec, n_probes: usize, seed: u64) -> Result<CoercivityEstimate> {
    if n_probes < 10 {
        return Err(Error::InvalidParameter(format!(
            "coercivity estimate needs at least 10 probes, got {n_probes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lower = f64::INFINITY;
    for _ in 0..n_probes {
        let v = random_follower_probe(spec, &mut rng)?;
        lower = lower.min(nash_quadratic_form(spec, &v)?);
    }
    Ok(CoercivityEstimate {
        rho0: spec.weights.rho0(),
        lower_bound: lower,
    })
}
