//! The subcommand pipelines. Each fills a [`RunRecord`] and returns solver
//! errors unchanged; invariant failures are recorded as failed checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snlab_core::config::Experiment;
use snlab_core::hum_leader::{
    epsilon_sweep, free_terminal_state, gramian_apply, observability_rayleigh, solve_leader, terminal_norm,
    HumParams, ObservabilityMode, SWEEP_CSV_HEADER,
};
use snlab_core::lattice_weights::{check_weight_inequalities, InequalityReport};
use snlab_core::nash::{
    coercivity_estimate, nash_from_adjoint, nash_residual, relative_difference, solve_nash_fixed_point, NashSolution,
};
use snlab_core::noise_tree::{AdaptedField, Lattice};
use snlab_core::oracle::DenseInstance;
use snlab_core::parabolic_core::N_COMP;
use snlab_core::systems::{
    evaluate_functionals, hierarchy_duality, solve_coupled_adjoint, solve_optimality_system, solve_state,
    FollowerControls, LeaderControls,
};
use snlab_core::Result;

use crate::record::{sci, RunRecord, Table};

/// Gate on the duality residual of the closed-loop hierarchy.
const DUALITY_GATE: f64 = 1e-10;
/// Gate on the pairwise agreement of two Nash solvers.
const AGREEMENT_GATE: f64 = 1e-8;

fn random_field(rng: &mut ChaCha8Rng, lat: &Lattice, n_comp: usize) -> AdaptedField {
    let mut f = lat.zeros(n_comp);
    f.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    f
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_leaders(rng: &mut ChaCha8Rng, lat: &Lattice) -> LeaderControls {
    LeaderControls {
        u1: random_field(rng, lat, 1),
        u2: random_field(rng, lat, 1),
        u3: random_field(rng, lat, 1),
    }
}

fn rel_field_diff(a: &AdaptedField, b: &AdaptedField) -> f64 {
    let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    diff / a.max_abs().max(b.max_abs()).max(f64::MIN_POSITIVE)
}

/// `follower,m,node,x,value` rows of every follower control.
fn follower_dump(lat: &Lattice, v: &FollowerControls) -> Table {
    let mut t = Table::new("followers", "follower,m,node,x,value");
    let x = lat.grid.nodes();
    for (i, f) in v.v.iter().enumerate() {
        for m in 0..f.n_times() {
            for node in 0..f.nodes(m) {
                for (j, xj) in x.iter().enumerate() {
                    t.push(&[
                        i.to_string(),
                        m.to_string(),
                        node.to_string(),
                        sci(*xj),
                        sci(f.get(m, node, 0, j)),
                    ]);
                }
            }
        }
    }
    t
}

fn nash_rows(t: &mut Table, e: &Experiment, leaders: &LeaderControls, sol: &NashSolution) -> Result<()> {
    let state = solve_state(&e.spec, &e.y0, leaders, &sol.v_star)?;
    let costs = evaluate_functionals(&e.spec, leaders, &sol.v_star, &state)?.followers;
    for (i, (res, cost)) in sol.residuals.iter().zip(&costs).enumerate() {
        t.push(&[
            sol.method.name().to_string(),
            i.to_string(),
            sci(*res),
            sci(*cost),
            sol.iterations.to_string(),
            sci(sol.contraction),
        ]);
    }
    Ok(())
}

/// Nash equilibrium of the followers for the zero leader, by fixed point and
/// by the adjoint characterization, with a cross-check.
pub fn nash_solve(e: &Experiment, rec: &mut RunRecord) -> Result<()> {
    let spec = &e.spec;
    let leaders = LeaderControls::zeros(spec.lattice());
    let fp = rec.time("fixed_point", || solve_nash_fixed_point(spec, &e.y0, &leaders))?;
    let ad = rec.time("adjoint_characterization", || nash_from_adjoint(spec, &e.y0, &leaders))?;
    let seed = rec.seed;
    let coercivity = rec.time("coercivity", || coercivity_estimate(spec, e.config.probes, seed))?;
    let agreement = relative_difference(spec, &fp.v_star, &ad.v_star)?;

    let mut t = Table::new("nash", "method,follower,residual,J,iterations,contraction");
    nash_rows(&mut t, e, &leaders, &fp)?;
    nash_rows(&mut t, e, &leaders, &ad)?;
    rec.table(t);
    rec.table(follower_dump(spec.lattice(), &fp.v_star));

    rec.value("rho0", sci(coercivity.rho0));
    rec.value("coercivity_lower_bound", sci(coercivity.lower_bound));
    rec.check_below("methods_agree", agreement, AGREEMENT_GATE);
    let worst = fp.residuals.iter().chain(&ad.residuals).cloned().fold(0.0, f64::max);
    rec.check_below("nash_residual", worst, e.config.nash_tol);
    rec.check(
        "coercive",
        coercivity.lower_bound > 0.0,
        format!("min <Lv, v> over {} probes {}", e.config.probes, sci(coercivity.lower_bound)),
    );
    Ok(())
}

/// Penalised leader problem at the configured epsilon, with consistency
/// checks of the whole hierarchy at the solution.
pub fn leader_solve(e: &Experiment, rec: &mut RunRecord) -> Result<()> {
    let spec = &e.spec;
    let c = &e.config;
    let params = HumParams::new(c.epsilon, c.cg_tol, c.cg_max_iter)?;
    let sol = rec.time("hum", || solve_leader(spec, &e.y0, &params))?;
    let residual = rec.time("nash_check", || nash_residual(spec, &e.y0, &sol.leaders, &sol.followers))?;
    let adjoint = solve_coupled_adjoint(spec, &sol.phi_t)?;
    let duality = hierarchy_duality(spec, &e.y0, &sol.leaders, &sol.state, &adjoint)?;

    let mut t = Table::new(
        "leader",
        "epsilon,terminal_norm,free_terminal_norm,J,cg_iterations,identity_residual",
    );
    t.push(&[
        sci(c.epsilon),
        sci(sol.terminal_norm),
        sci(sol.free_terminal_norm),
        sci(sol.j_value),
        sol.cg_iterations.to_string(),
        sci(sol.identity_residual),
    ]);
    rec.table(t);

    let lat = spec.lattice();
    let n_x = lat.n_x();
    let mut t = Table::new("terminal", "node,component,x,y_T,phi_T");
    let y_t = sol.state.terminal();
    for node in 0..y_t.len() / (N_COMP * n_x) {
        for comp in 0..N_COMP {
            for (j, x) in lat.grid.nodes().iter().enumerate() {
                let k = (node * N_COMP + comp) * n_x + j;
                t.push(&[node.to_string(), comp.to_string(), sci(*x), sci(y_t[k]), sci(sol.phi_t[k])]);
            }
        }
    }
    rec.table(t);

    rec.value("terminal_norm", sci(sol.terminal_norm));
    rec.value("J", sci(sol.j_value));
    rec.value("duality_lhs", sci(duality.lhs));
    rec.value("duality_rhs", sci(duality.rhs));
    rec.check_below(
        "identity_y_T_plus_eps_phi_T",
        sol.identity_residual,
        10.0 * c.cg_tol * sol.free_terminal_norm,
    );
    rec.check_below("follower_nash_residual", residual.iter().cloned().fold(0.0, f64::max), c.nash_tol);
    rec.check_below("hierarchy_duality", duality.residual(), DUALITY_GATE);
    Ok(())
}

/// Penalised leader problem over the configured decreasing epsilons.
pub fn sweep(e: &Experiment, rec: &mut RunRecord) -> Result<()> {
    let spec = &e.spec;
    let c = &e.config;
    let report = rec.time("sweep", || epsilon_sweep(spec, &e.y0, &c.epsilons, c.cg_tol, c.cg_max_iter))?;
    let free_norm = terminal_norm(spec, &free_terminal_state(spec, &e.y0)?);
    let mut t = Table::new("sweep", SWEEP_CSV_HEADER);
    for r in &report.rows {
        t.push(&[
            sci(r.epsilon),
            sci(r.terminal_norm),
            sci(r.u1_norm),
            sci(r.u2_norm),
            sci(r.u3_norm),
            sci(r.j_value),
            sci(r.identity_residual),
            r.cg_iterations.to_string(),
        ]);
    }
    rec.table(t);
    rec.value("slope_log_terminal_vs_log_eps", sci(report.slope));
    rec.value("max_control_energy", sci(report.max_control));
    rec.value("control_energy_ratio", sci(report.control_ratio));
    let identity = report.rows.iter().map(|r| r.identity_residual).fold(0.0, f64::max);
    rec.check_below("identity_y_T_plus_eps_phi_T", identity, 10.0 * c.cg_tol * free_norm);
    let monotone = report
        .rows
        .windows(2)
        .all(|w| w[1].terminal_norm <= w[0].terminal_norm * (1.0 + 1e-9) + 1e-300);
    rec.check("terminal_norm_monotone", monotone, "non-increasing as epsilon decreases".into());
    Ok(())
}

/// Duality identity of the closed-loop state and the coupled adjoint on
/// random targets, initial data, leaders and terminal data.
pub fn duality_check(e: &Experiment, rec: &mut RunRecord) -> Result<()> {
    let lat = e.spec.lattice().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(rec.seed);
    let draws = e.config.probes;
    let (t, worst) = rec.time("draws", || -> Result<_> {
        let mut t = Table::new("duality", "draw,lhs,rhs,residual");
        let mut worst: f64 = 0.0;
        for draw in 0..draws {
            let mut spec = e.spec.clone();
            for target in &mut spec.targets {
                *target = random_field(&mut rng, &lat, N_COMP);
            }
            let y0 = random_vec(&mut rng, N_COMP * lat.n_x());
            let leaders = random_leaders(&mut rng, &lat);
            let phi_t = random_vec(&mut rng, lat.zeros(N_COMP).terminal().len());
            let state = solve_optimality_system(&spec, &y0, &leaders)?.state;
            let adjoint = solve_coupled_adjoint(&spec, &phi_t)?;
            let d = hierarchy_duality(&spec, &y0, &leaders, &state, &adjoint)?;
            worst = worst.max(d.residual());
            t.push(&[draw.to_string(), sci(d.lhs), sci(d.rhs), sci(d.residual())]);
        }
        Ok((t, worst))
    })?;
    rec.table(t);
    rec.value("draws", draws);
    rec.value("max_residual", sci(worst));
    rec.check_below("duality_residual", worst, DUALITY_GATE);
    Ok(())
}

/// Weight tables on the time grid and the empirical weight constants.
pub fn weights_report(e: &Experiment, rec: &mut RunRecord) -> Result<()> {
    let w = &e.spec.weights;
    let lat = e.spec.lattice();
    let report = rec.time("inequalities", || check_weight_inequalities(w, &lat.time))?;
    let mut t = Table::new("weights", "m,t,gamma,ell,alpha_star,log_rho_star,log_rho_bar");
    for m in 0..w.n_times() {
        t.push(&[
            m.to_string(),
            sci(w.times[m]),
            sci(w.gamma[m]),
            sci(w.ell[m]),
            sci(w.alpha_star[m]),
            sci(w.log_rho_star[m]),
            sci(w.log_rho_bar[m]),
        ]);
    }
    rec.table(t);
    let mut t = Table::new("inequalities", InequalityReport::CSV_HEADER);
    let passes = report.passes();
    t.push(&[
        sci(report.c1),
        sci(report.c2),
        sci(report.c3),
        sci(report.c4),
        sci(report.c5),
        passes.to_string(),
    ]);
    rec.table(t);
    rec.value("rho0", sci(w.rho0()));
    rec.check("constants_finite", passes, "c1..c5 finite".into());
    rec.check(
        "rho_star_below_theta_bar",
        w.rho_star_below_theta_bar(),
        "rho_*^-4 <= theta_bar^2 at every node".into(),
    );
    let horizon = lat.time.horizon();
    let expected = 4.0 / (horizon * horizon);
    rec.check_below("min_gamma_is_4_over_T2", (report.c1 - expected).abs() / expected, 1e-12);
    Ok(())
}

/// Sampled or dense Rayleigh quotients of the observability inequality.
pub fn observability(e: &Experiment, rec: &mut RunRecord) -> Result<()> {
    let mode = ObservabilityMode::parse(&e.config.observability_mode)?;
    let seed = rec.seed;
    let report = rec.time("observability", || observability_rayleigh(&e.spec, e.config.probes, mode, seed))?;
    let mut t = Table::new("observability", "probe,lhs,rhs,ratio");
    for (k, s) in report.samples.iter().enumerate() {
        t.push(&[k.to_string(), sci(s.lhs), sci(s.rhs), sci(s.lhs / s.rhs)]);
    }
    rec.table(t);
    rec.value("mode", &e.config.observability_mode);
    rec.value("max_ratio", sci(report.max_ratio));
    rec.value("min_gramian_eig", sci(report.min_gramian_eig));
    rec.check(
        "no_vanishing_observation",
        report.flagged == 0,
        format!("{} flagged probes", report.flagged),
    );
    rec.check(
        "bounded_ratio",
        report.max_ratio.is_finite() && report.min_gramian_eig > 0.0,
        format!("max ratio {}", sci(report.max_ratio)),
    );
    Ok(())
}

/// Every iterative solver against the dense assembled oracle.
pub fn oracle_compare(e: &Experiment, rec: &mut RunRecord) -> Result<()> {
    let spec = &e.spec;
    let lat = spec.lattice();
    let inst = rec.time("assemble", || DenseInstance::assemble(spec))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rec.seed);
    let mut rows: Vec<(&str, f64, f64)> = Vec::new();

    rows.push(("backward_is_transpose", inst.transpose_deviation()?, 1e-12));

    let leaders = random_leaders(&mut rng, lat);
    let mut followers = FollowerControls {
        v: (0..spec.follower_count()).map(|_| random_field(&mut rng, lat, 1)).collect(),
    };
    for v in &mut followers.v {
        (0..=lat.steps()).filter(|&m| spec.is_frozen(m)).for_each(|m| v.clear_slice(m));
    }
    let state = solve_state(spec, &e.y0, &leaders, &followers)?;
    rows.push(("state", rel_field_diff(&state, &inst.state(&e.y0, &leaders, &followers)?), 1e-12));

    let (fp, ad, dense) = rec.time("nash", || -> Result<_> {
        Ok((
            solve_nash_fixed_point(spec, &e.y0, &leaders)?,
            nash_from_adjoint(spec, &e.y0, &leaders)?,
            inst.solve_dense_nash(&e.y0, &leaders)?,
        ))
    })?;
    rows.push(("nash_fixed_point", relative_difference(spec, &fp.v_star, &dense)?, AGREEMENT_GATE));
    rows.push(("nash_adjoint", relative_difference(spec, &ad.v_star, &dense)?, AGREEMENT_GATE));

    let closed = solve_optimality_system(spec, &e.y0, &leaders)?.state;
    rows.push(("closed_loop", rel_field_diff(&closed, &inst.closed_loop_state(&e.y0, &leaders)?), 1e-9));

    let gram = rec.time("gramian", || inst.gramian())?;
    rows.push(("gramian_symmetry", gram.asymmetry, 1e-10));
    let probe = random_vec(&mut rng, gram.matrix.nrows());
    let applied = gramian_apply(spec, &probe)?;
    let dense_applied = &gram.matrix * nalgebra::DVector::from_column_slice(&probe);
    let scale = dense_applied.amax().max(f64::MIN_POSITIVE);
    let gap = applied.iter().zip(dense_applied.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    rows.push(("gramian_apply", gap / scale, 1e-10));

    let c = &e.config;
    let sol = rec.time("hum", || solve_leader(spec, &e.y0, &HumParams::new(c.epsilon, c.cg_tol, c.cg_max_iter)?))?;
    let dh = inst.solve_dense_hum(&gram, &e.y0, c.epsilon)?;
    let diff: Vec<f64> = sol.phi_t.iter().zip(&dh.phi_t).map(|(a, b)| a - b).collect();
    let phi_scale = terminal_norm(spec, &dh.phi_t).max(f64::MIN_POSITIVE);
    rows.push(("hum_phi_T", terminal_norm(spec, &diff) / phi_scale, 1e-7));
    let pred = dh.predicted_terminal_norm.max(f64::MIN_POSITIVE);
    rows.push(("hum_spectral_terminal_norm", (sol.terminal_norm - dh.predicted_terminal_norm).abs() / pred, 1e-9));

    let mut t = Table::new("oracle", "comparison,value,gate,pass");
    for (name, value, gate) in rows {
        t.push(&[name.to_string(), sci(value), sci(gate), (value <= gate).to_string()]);
        rec.check_below(name, value, gate);
    }
    rec.table(t);
    rec.value("dense_dimension", inst.dim());
    rec.value("min_gramian_eig", sci(gram.eigenvalues.min()));
    Ok(())
}
