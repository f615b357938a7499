//! The leader-follower game: state, follower adjoints, the coupled adjoint
//! backward-forward system, the closed-loop optimality system and the cost
//! functionals.
//!
//! Backward sources follow the bracket convention
//! `dz + Delta z dt = [-A^T z + F] dt + Z dW`, so the follower adjoint has
//! `F = -alpha_i (y - y_d^i) chi_Od` and the leader adjoint has
//! `F = sum_i alpha_i psi^i chi_Od`, restricted to the observed components.
//! Drift controls are paired with the field `w = S E[z_{m+1} | F_m]` of the
//! discrete backward step, which is what makes every identity exact.

use crate::error::{Error, Result};
use crate::lattice_weights::{SubdomainLayout, WeightTables};
use crate::noise_tree::{expect_spacetime_inner, level_inner, AdaptedField, Lattice};
use crate::parabolic_core::{
    BackwardSolution, Propagator, SourceKind, SourceSpec, N_COMP,
};
use crate::picard::{iterate, PicardSettings};

/// Which family of follower functionals is played.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Both components tracked; control cost weighted by `rho_*^2`.
    FullObservation,
    /// Only the second component tracked; unweighted control cost.
    SecondComponent,
}

impl Scenario {
    /// Weights of the two components in the tracking term.
    pub fn observed(self) -> [f64; 2] {
        match self {
            Scenario::FullObservation => [1.0, 1.0],
            Scenario::SecondComponent => [0.0, 1.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::FullObservation => "full",
            Scenario::SecondComponent => "second",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(Scenario::FullObservation),
            "second" => Ok(Scenario::SecondComponent),
            other => Err(Error::InvalidParameter(format!(
                "unknown scenario '{other}' (expected full or second)"
            ))),
        }
    }
}

/// Game parameters other than the lattice, coupling and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSettings {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// One two-component target per follower; only values on `O_d` matter.
    pub targets: Vec<AdaptedField>,
    pub scenario: Scenario,
    pub picard: PicardSettings,
    /// Sign condition on `a_21` over `O_0`, checked when present.
    pub a0: Option<f64>,
    /// Cap on exponents when evaluating `rho_*^{+-2}`.
    pub log_cap: f64,
    /// Cap on the `rho`-weighted target energy; exceeding it only warns.
    pub target_cap: f64,
}

#[derive(Debug, Clone)]
pub struct GameSpec {
    propagator: Propagator,
    pub layout: SubdomainLayout,
    pub weights: WeightTables,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub targets: Vec<AdaptedField>,
    pub scenario: Scenario,
    pub picard: PicardSettings,
    /// Control cost weight `c_m` (`rho_*^2` or 1), `m = 0..=M`.
    cost: Vec<f64>,
    /// `1 / c_m`, exactly zero where `c_m` is infinite.
    inv_cost: Vec<f64>,
    pub warnings: Vec<String>,
}

impl GameSpec {
    pub fn new(
        propagator: Propagator,
        layout: SubdomainLayout,
        weights: WeightTables,
        settings: GameSettings,
    ) -> Result<Self> {
        let lat = propagator.lattice();
        let m = layout.follower_count();
        if layout.g0.len() != lat.n_x() {
            return Err(Error::ShapeMismatch("layout masks and grid differ".into()));
        }
        if weights.n_times() != lat.steps() + 1 || weights.n_x != lat.n_x() {
            return Err(Error::ShapeMismatch("weight tables and lattice differ".into()));
        }
        if settings.alpha.len() != m || settings.beta.len() != m || settings.targets.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "{m} followers need {m} alpha, beta and target entries"
            )));
        }
        if let Some(a) = settings.alpha.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter(format!("alpha_i must be positive, got {a}")));
        }
        if let Some(b) = settings.beta.iter().find(|&&b| !(b >= 1.0 && b.is_finite())) {
            return Err(Error::InvalidParameter(format!("beta_i must be >= 1, got {b}")));
        }
        let template = lat.zeros(N_COMP);
        for t in &settings.targets {
            template.check_shape(t, "target field")?;
        }
        settings.picard.validate()?;
        if let Some(a0) = settings.a0 {
            propagator.coupling().check_sign(&layout.o0, a0)?;
        }

        let mut warnings = Vec::new();
        let mut clamped = 0;
        let (cost, inv_cost): (Vec<f64>, Vec<f64>) = match settings.scenario {
            Scenario::FullObservation => weights
                .log_rho_star
                .iter()
                .map(|&l| {
                    let e = 2.0 * l;
                    if e.is_infinite() {
                        (f64::INFINITY, 0.0)
                    } else if e > settings.log_cap {
                        clamped += 1;
                        (settings.log_cap.exp(), (-settings.log_cap).exp())
                    } else {
                        (e.exp(), (-e).exp())
                    }
                })
                .unzip(),
            Scenario::SecondComponent => (vec![1.0; lat.steps() + 1], vec![1.0; lat.steps() + 1]),
        };
        if clamped > 0 {
            warnings.push(format!("rho_*^2 clamped at exp({}) on {clamped} time nodes", settings.log_cap));
        }

        let mut spec = Self {
            propagator,
            layout,
            weights,
            alpha: settings.alpha,
            beta: settings.beta,
            targets: settings.targets,
            scenario: settings.scenario,
            picard: settings.picard,
            cost,
            inv_cost,
            warnings,
        };
        if spec.scenario == Scenario::SecondComponent {
            for i in 0..m {
                let e = spec.weighted_target_energy(i)?;
                if !(e <= settings.target_cap) {
                    spec.warnings.push(format!(
                        "rho-weighted energy {e:.3e} of target {} exceeds cap {:.3e}",
                        i + 1,
                        settings.target_cap
                    ));
                }
            }
        }
        Ok(spec)
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn lattice(&self) -> &Lattice {
        self.propagator.lattice()
    }

    pub fn follower_count(&self) -> usize {
        self.alpha.len()
    }

    /// `c_m`, `m = 0..=M`.
    pub fn cost_weights(&self) -> &[f64] {
        &self.cost
    }

    pub fn inverse_cost_weights(&self) -> &[f64] {
        &self.inv_cost
    }

    /// Time indices whose follower values are pinned to zero by an
    /// infinite cost weight.
    pub fn is_frozen(&self, m: usize) -> bool {
        self.cost[m].is_infinite()
    }

    /// Copy with different follower weights `beta_i`.
    pub fn with_beta(&self, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != self.follower_count() || beta.iter().any(|&b| !(b >= 1.0 && b.is_finite())) {
            return Err(Error::InvalidParameter(format!("invalid beta vector {beta:?}")));
        }
        let mut out = self.clone();
        out.beta = beta;
        Ok(out)
    }

    /// Copy with every target set to zero.
    pub fn without_targets(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.targets {
            t.scale(0.0);
        }
        out
    }

    /// `sum_m dt rho_bar^2 E <y_d, y_d>_{O_d}` over the observed components.
    pub fn weighted_target_energy(&self, i: usize) -> Result<f64> {
        let lat = self.lattice();
        let obs = self.observed_part(&self.targets[i]);
        let w: Vec<f64> = self.weights.log_rho_bar.iter().map(|l| (2.0 * l).exp()).collect();
        expect_spacetime_inner(&obs, &obs, &lat.grid, &lat.time, Some(&self.layout.observation), Some(&w))
    }

    /// Zeroes the unobserved component.
    fn observed_part(&self, f: &AdaptedField) -> AdaptedField {
        scale_components(f, self.scenario.observed())
    }
}

/// Multiplies component `c` of a two-component field by `weights[c]`.
pub fn scale_components(f: &AdaptedField, weights: [f64; 2]) -> AdaptedField {
    let mut out = f.clone();
    let n_x = f.n_x();
    for m in 0..out.n_times() {
        for (idx, v) in out.slice_mut(m).iter_mut().enumerate() {
            *v *= weights[(idx / n_x) % N_COMP];
        }
    }
    out
}

/// Leader controls: `u1` acts on the drift of the first component through
/// `G_0`, `u2` and `u3` are the diffusion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderControls {
    pub u1: AdaptedField,
    pub u2: AdaptedField,
    pub u3: AdaptedField,
}

impl LeaderControls {
    pub fn zeros(lattice: &Lattice) -> Self {
        Self {
            u1: lattice.zeros(1),
            u2: lattice.zeros(1),
            u3: lattice.zeros(1),
        }
    }

    pub fn axpy(&mut self, c: f64, other: &LeaderControls) {
        self.u1.axpy(c, &other.u1);
        self.u2.axpy(c, &other.u2);
        self.u3.axpy(c, &other.u3);
    }

    pub fn max_abs(&self) -> f64 {
        self.u1.max_abs().max(self.u2.max_abs()).max(self.u3.max_abs())
    }
}

/// Follower controls, one single-component field per follower.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerControls {
    pub v: Vec<AdaptedField>,
}

impl FollowerControls {
    pub fn zeros(lattice: &Lattice, m: usize) -> Self {
        Self {
            v: (0..m).map(|_| lattice.zeros(1)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.v.iter().map(AdaptedField::max_abs).fold(0.0, f64::max)
    }
}

/// Drift and noise sources of the state equation.
pub fn state_sources(spec: &GameSpec, leaders: &LeaderControls, followers: &FollowerControls) -> SourceSpec {
    let lat = spec.lattice();
    let mut src = SourceSpec::zero();
    src.add_localized(lat, SourceKind::Drift, 0, Some(&spec.layout.g0), &leaders.u1, 1.0);
    for (v, gi) in followers.v.iter().zip(&spec.layout.followers) {
        src.add_localized(lat, SourceKind::Drift, 0, Some(gi), v, 1.0);
    }
    src.add_localized(lat, SourceKind::Noise, 0, None, &leaders.u2, 1.0);
    src.add_localized(lat, SourceKind::Noise, 1, None, &leaders.u3, 1.0);
    src
}

/// Forward solve of the controlled state. With zero followers this is the
/// auxiliary state driven by the leaders alone.
pub fn solve_state(
    spec: &GameSpec,
    y0: &[f64],
    leaders: &LeaderControls,
    followers: &FollowerControls,
) -> Result<AdaptedField> {
    if followers.v.len() != spec.follower_count() {
        return Err(Error::ShapeMismatch("follower count".into()));
    }
    spec.propagator.forward_sweep(y0, &state_sources(spec, leaders, followers))
}

/// `F^i = -alpha_i w_c (y_c - y^i_{c,d}) chi_Od` per component `c`.
pub fn follower_adjoint_source(
    spec: &GameSpec,
    state: &AdaptedField,
    i: usize,
    component_weights: [f64; 2],
) -> AdaptedField {
    let mut diff = state.clone();
    diff.axpy(-1.0, &spec.targets[i]);
    let mut f = scale_components(&diff.masked(&spec.layout.observation), component_weights);
    f.scale(-spec.alpha[i]);
    f
}

/// Follower adjoints with the scenario's observed components.
pub fn solve_follower_adjoint(spec: &GameSpec, state: &AdaptedField) -> Result<Vec<BackwardSolution>> {
    solve_follower_adjoint_weighted(spec, state, spec.scenario.observed())
}

/// Follower adjoints with explicit component weights in the tracking
/// source; zero terminal data.
pub fn solve_follower_adjoint_weighted(
    spec: &GameSpec,
    state: &AdaptedField,
    component_weights: [f64; 2],
) -> Result<Vec<BackwardSolution>> {
    let zero_terminal = vec![0.0; state.terminal().len()];
    (0..spec.follower_count())
        .map(|i| {
            let f = follower_adjoint_source(spec, state, i, component_weights);
            spec.propagator.backward_sweep(&zero_terminal, Some(&f))
        })
        .collect()
}

/// `gain_i c_m^{-1} w_1 chi_{G_i}` for each follower, `w` the pairing field
/// of a backward solution.
fn localized_first_component(
    spec: &GameSpec,
    back: &BackwardSolution,
    i: usize,
    gain: f64,
) -> AdaptedField {
    let mut out = back.pairing.component(0).masked(&spec.layout.followers[i]);
    for m in 0..out.n_times() {
        let c = gain * spec.inv_cost[m];
        out.slice_mut(m).iter_mut().for_each(|v| *v *= c);
    }
    out
}

/// Nash feedback `v_i = -(1/beta_i) c^{-1} w_1^{z_i} chi_{G_i}`.
pub fn feedback_controls(spec: &GameSpec, adjoints: &[BackwardSolution]) -> FollowerControls {
    FollowerControls {
        v: adjoints
            .iter()
            .enumerate()
            .map(|(i, z)| localized_first_component(spec, z, i, -1.0 / spec.beta[i]))
            .collect(),
    }
}

/// Values of the leader functional and the follower functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct Functionals {
    pub leader: f64,
    pub followers: Vec<f64>,
}

pub fn evaluate_functionals(
    spec: &GameSpec,
    leaders: &LeaderControls,
    followers: &FollowerControls,
    state: &AdaptedField,
) -> Result<Functionals> {
    let lat = spec.lattice();
    let (g, t) = (&lat.grid, &lat.time);
    let leader = 0.5
        * (expect_spacetime_inner(&leaders.u1, &leaders.u1, g, t, Some(&spec.layout.g0), None)?
            + expect_spacetime_inner(&leaders.u2, &leaders.u2, g, t, None, None)?
            + expect_spacetime_inner(&leaders.u3, &leaders.u3, g, t, None, None)?);
    let mut values = Vec::with_capacity(spec.follower_count());
    for i in 0..spec.follower_count() {
        let mut diff = state.clone();
        diff.axpy(-1.0, &spec.targets[i]);
        let diff = spec.observed_part(&diff);
        let track = expect_spacetime_inner(&diff, &diff, g, t, Some(&spec.layout.observation), None)?;
        let v = &followers.v[i];
        let cost = expect_spacetime_inner(v, v, g, t, Some(&spec.layout.followers[i]), Some(&spec.cost))?;
        values.push(0.5 * spec.alpha[i] * track + 0.5 * spec.beta[i] * cost);
    }
    Ok(Functionals {
        leader,
        followers: values,
    })
}

/// Solution of the coupled adjoint backward-forward system.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledAdjointSolution {
    /// Backward pair `(phi, Phi)` with its pairing field.
    pub phi: BackwardSolution,
    /// Forward pairs `psi^i`, `psi^i(0) = 0`.
    pub psi: Vec<AdaptedField>,
    /// `h = sum_i alpha_i psi^i`.
    pub h: AdaptedField,
    pub iterations: usize,
    pub contraction: f64,
}

/// Backward source `sum_i alpha_i psi^i chi_Od` on the observed components.
pub fn coupled_backward_source(spec: &GameSpec, psi: &[AdaptedField]) -> AdaptedField {
    let mut h = spec.lattice().zeros(N_COMP);
    for (a, p) in spec.alpha.iter().zip(psi) {
        h.axpy(*a, p);
    }
    spec.observed_part(&h.masked(&spec.layout.observation))
}

/// `psi^i` driven by `(1/beta_i) c^{-1} w_1^phi chi_{G_i}`.
fn solve_psi(spec: &GameSpec, phi: &BackwardSolution) -> Result<Vec<AdaptedField>> {
    let lat = spec.lattice();
    let zero = vec![0.0; N_COMP * lat.n_x()];
    (0..spec.follower_count())
        .map(|i| {
            let s = localized_first_component(spec, phi, i, 1.0 / spec.beta[i]);
            let mut src = SourceSpec::zero();
            src.add_localized(lat, SourceKind::Drift, 0, None, &s, 1.0);
            spec.propagator.forward_sweep(&zero, &src)
        })
        .collect()
}

pub fn solve_coupled_adjoint(spec: &GameSpec, phi_terminal: &[f64]) -> Result<CoupledAdjointSolution> {
    let lat = spec.lattice();
    let start: Vec<AdaptedField> = (0..spec.follower_count()).map(|_| lat.zeros(N_COMP)).collect();
    let outcome = iterate(&spec.picard, "coupled adjoint system", start, |psi| {
        let f = coupled_backward_source(spec, psi);
        let phi = spec.propagator.backward_sweep(phi_terminal, Some(&f))?;
        solve_psi(spec, &phi)
    })?;
    let psi = outcome.fields;
    let f = coupled_backward_source(spec, &psi);
    let phi = spec.propagator.backward_sweep(phi_terminal, Some(&f))?;
    let mut h = lat.zeros(N_COMP);
    for (a, p) in spec.alpha.iter().zip(&psi) {
        h.axpy(*a, p);
    }
    Ok(CoupledAdjointSolution {
        phi,
        psi,
        h,
        iterations: outcome.iterations,
        contraction: outcome.contraction,
    })
}

/// Closed-loop state with the Nash feedback of the followers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalitySolution {
    pub state: AdaptedField,
    pub adjoints: Vec<BackwardSolution>,
    pub followers: FollowerControls,
    pub iterations: usize,
    pub contraction: f64,
}

pub fn solve_optimality_system(
    spec: &GameSpec,
    y0: &[f64],
    leaders: &LeaderControls,
) -> Result<OptimalitySolution> {
    let lat = spec.lattice();
    let start: Vec<AdaptedField> = (0..spec.follower_count()).map(|_| lat.zeros(1)).collect();
    let outcome = iterate(&spec.picard, "optimality system", start, |v| {
        let followers = FollowerControls { v: v.to_vec() };
        let y = solve_state(spec, y0, leaders, &followers)?;
        let z = solve_follower_adjoint(spec, &y)?;
        Ok(feedback_controls(spec, &z).v)
    })?;
    let followers = FollowerControls { v: outcome.fields };
    let state = solve_state(spec, y0, leaders, &followers)?;
    let adjoints = solve_follower_adjoint(spec, &state)?;
    Ok(OptimalitySolution {
        state,
        adjoints,
        followers,
        iterations: outcome.iterations,
        contraction: outcome.contraction,
    })
}

/// Both sides of the duality identity between the closed-loop state and the
/// coupled adjoint system:
///
/// ```text
/// E<y(T), phi_T> - <y0, phi(0)>
///   = E sum dt (<chi_G0 u1, phi_1> + <u2, Phi_1> + <u3, Phi_2>)
///     + sum_i alpha_i E sum dt <y_d^i, psi^i chi_Od>
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyDuality {
    pub lhs: f64,
    pub rhs: f64,
}

impl HierarchyDuality {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs() / (1.0 + self.lhs.abs() + self.rhs.abs())
    }
}

pub fn hierarchy_duality(
    spec: &GameSpec,
    y0: &[f64],
    leaders: &LeaderControls,
    state: &AdaptedField,
    adjoint: &CoupledAdjointSolution,
) -> Result<HierarchyDuality> {
    let lat = spec.lattice();
    let (g, t) = (&lat.grid, &lat.time);
    let phi = &adjoint.phi;
    state.check_shape(&phi.value, "state and adjoint")?;
    let lhs = level_inner(state.terminal(), phi.value.terminal(), state.nodes(lat.steps()), lat.h())
        - level_inner(y0, phi.value.slice(0), 1, lat.h());
    let mut rhs = expect_spacetime_inner(&leaders.u1, &phi.pairing.component(0), g, t, Some(&spec.layout.g0), None)?
        + expect_spacetime_inner(&leaders.u2, &phi.martingale.component(0), g, t, None, None)?
        + expect_spacetime_inner(&leaders.u3, &phi.martingale.component(1), g, t, None, None)?;
    for i in 0..spec.follower_count() {
        let yd = spec.observed_part(&spec.targets[i]);
        rhs += spec.alpha[i]
            * expect_spacetime_inner(&yd, &adjoint.psi[i], g, t, Some(&spec.layout.observation), None)?;
    }
    Ok(HierarchyDuality { lhs, rhs })
}

/// `|lhs - rhs| / (1 + |lhs| + |rhs|)` of [`hierarchy_duality`].
pub fn duality_residual(
    spec: &GameSpec,
    y0: &[f64],
    leaders: &LeaderControls,
    state: &AdaptedField,
    adjoint: &CoupledAdjointSolution,
) -> Result<f64> {
    Ok(hierarchy_duality(spec, y0, leaders, state, adjoint)?.residual())
}
