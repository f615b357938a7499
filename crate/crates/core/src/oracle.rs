//! Dense all-at-once reference for small lattices.
//!
//! Every time slice of the state is stacked into one vector, ordered
//! time-major, then tree node, then component, then space. The whole
//! forward scheme becomes one sparse-in-principle linear system `P Y = b`
//! with rows
//!
//! * `Y_0 = y0`,
//! * `(I - dt Delta_h) Y_{m+1}[c] - (I + dt A_m) Y_m[p] = dt f_m[p]
//!   + (I - dt Delta_h) (dW_c gbar_k[p])` for every child `c` of `p`,
//!
//! assembled directly from the stencil coefficients and factorised once by
//! pivoted LU. The follower maps `Lambda_i`, the Nash operator, the closed
//! loop and the leader Gramian are then explicit matrices. Nothing here
//! calls the sweeps of the propagator except [`DenseInstance::backward_initial_map`],
//! which exists to be compared with the transpose of the assembled map.

use nalgebra::{DMatrix, DVector, SymmetricEigen, LU};

use crate::error::{Error, Result};
use crate::noise_tree::{AdaptedField, NoiseTree};
use crate::parabolic_core::N_COMP;
use crate::systems::{FollowerControls, GameSpec, LeaderControls};

pub const DEFAULT_DIMENSION_CAP: usize = 20_000;

/// Control unknowns `(m, node, j)` of one single-component control field.
#[derive(Debug, Clone, PartialEq)]
struct ControlSpace {
    dofs: Vec<(usize, usize, usize)>,
    metric: Vec<f64>,
}

impl ControlSpace {
    fn len(&self) -> usize {
        self.dofs.len()
    }

    fn gather(&self, f: &AdaptedField) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.dofs.iter().map(|&(m, p, j)| f.get(m, p, 0, j)))
    }

    fn scatter(&self, x: &[f64], template: &AdaptedField) -> AdaptedField {
        let mut f = template.clone();
        f.scale(0.0);
        for (&(m, p, j), &v) in self.dofs.iter().zip(x) {
            f.set(m, p, 0, j, v);
        }
        f
    }
}

#[derive(Debug, Clone)]
pub struct DenseInstance {
    spec: GameSpec,
    offsets: Vec<usize>,
    dim: usize,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Running quadrature weight per stacked unknown (zero at `t = T`).
    run_metric: DVector<f64>,
    /// Observation indicator per stacked unknown.
    observe: DVector<f64>,
    terminal_weight: f64,
    follower_spaces: Vec<ControlSpace>,
    leader_spaces: [ControlSpace; 3],
    /// `Lambda_i`: follower unknowns to stacked state.
    lambda: Vec<DMatrix<f64>>,
}

/// Result of a dense penalised HUM solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHum {
    pub phi_t: Vec<f64>,
    /// `|y(T)|` of the closed loop driven by the leaders built from `phi_t`.
    pub terminal_norm: f64,
    /// `sqrt(sum_k (eps / (lambda_k + eps))^2 b_k^2)` from the Gramian
    /// eigendecomposition.
    pub predicted_terminal_norm: f64,
}

/// Gramian matrix and its eigendecomposition.
#[derive(Debug, Clone)]
pub struct DenseGramian {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// `max |G - G^T|` relative to `max |G|`.
    pub asymmetry: f64,
}

impl DenseInstance {
    pub fn assemble(spec: &GameSpec) -> Result<Self> {
        Self::assemble_with_cap(spec, DEFAULT_DIMENSION_CAP)
    }

    pub fn assemble_with_cap(spec: &GameSpec, cap: usize) -> Result<Self> {
        let lat = spec.lattice();
        let n_x = lat.n_x();
        let steps = lat.steps();
        let mut offsets = Vec::with_capacity(steps + 2);
        let mut acc = 0;
        for m in 0..=steps {
            offsets.push(acc);
            acc += NoiseTree::nodes_at(lat.level(m)) * N_COMP * n_x;
        }
        offsets.push(acc);
        let dim = acc;
        if dim > cap {
            return Err(Error::DimensionCap { dim, cap });
        }

        let dt = lat.dt();
        let h = lat.h();
        let r = dt / (h * h);
        let mut p_mat = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..N_COMP * n_x {
            p_mat[(i, i)] = 1.0;
        }
        let coupling = spec.propagator().coupling();
        let idx = |m: usize, node: usize, c: usize, j: usize| offsets[m] + (node * N_COMP + c) * n_x + j;
        for m in 0..steps {
            let nodes = NoiseTree::nodes_at(lat.level(m));
            for p in 0..nodes {
                for child in children(lat.time.is_noise_step(m), p) {
                    for a in 0..N_COMP {
                        for j in 0..n_x {
                            let row = idx(m + 1, child, a, j);
                            p_mat[(row, row)] += 1.0 + 2.0 * r;
                            if j > 0 {
                                p_mat[(row, idx(m + 1, child, a, j - 1))] -= r;
                            }
                            if j + 1 < n_x {
                                p_mat[(row, idx(m + 1, child, a, j + 1))] -= r;
                            }
                            let am = coupling.at(m, j);
                            for b in 0..N_COMP {
                                let delta = if a == b { 1.0 } else { 0.0 };
                                p_mat[(row, idx(m, p, b, j))] -= delta + dt * am[a][b];
                            }
                        }
                    }
                }
            }
        }
        let lu = p_mat.lu();

        let observed = spec.scenario.observed();
        let mut run_metric = DVector::zeros(dim);
        let mut observe = DVector::zeros(dim);
        for m in 0..=steps {
            let nodes = NoiseTree::nodes_at(lat.level(m));
            let w = if m < steps { dt * h / nodes as f64 } else { 0.0 };
            for p in 0..nodes {
                for a in 0..N_COMP {
                    for j in 0..n_x {
                        let k = idx(m, p, a, j);
                        run_metric[k] = w;
                        if spec.layout.observation.contains(j) {
                            observe[k] = observed[a];
                        }
                    }
                }
            }
        }

        let space = |mask: Option<&crate::lattice_weights::Mask>, skip_frozen: bool| {
            let mut dofs = Vec::new();
            let mut metric = Vec::new();
            for m in 0..steps {
                if skip_frozen && spec.is_frozen(m) {
                    continue;
                }
                let nodes = NoiseTree::nodes_at(lat.level(m));
                for p in 0..nodes {
                    for j in 0..n_x {
                        if mask.is_none_or(|mk| mk.contains(j)) {
                            dofs.push((m, p, j));
                            metric.push(dt * h / nodes as f64);
                        }
                    }
                }
            }
            ControlSpace { dofs, metric }
        };
        let follower_spaces: Vec<ControlSpace> =
            spec.layout.followers.iter().map(|g| space(Some(g), true)).collect();
        let leader_spaces = [space(Some(&spec.layout.g0), false), space(None, false), space(None, false)];

        let mut inst = Self {
            spec: spec.clone(),
            offsets,
            dim,
            lu,
            run_metric,
            observe,
            terminal_weight: h / NoiseTree::nodes_at(lat.level(steps)) as f64,
            follower_spaces,
            leader_spaces,
            lambda: Vec::new(),
        };
        let lambda = (0..spec.follower_count())
            .map(|i| {
                let d = inst.drift_columns(&inst.follower_spaces[i], 0);
                inst.solve(&d)
            })
            .collect::<Result<Vec<_>>>()?;
        inst.lambda = lambda;
        Ok(inst)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn follower_unknowns(&self) -> usize {
        self.follower_spaces.iter().map(ControlSpace::len).sum()
    }

    fn n_x(&self) -> usize {
        self.spec.lattice().n_x()
    }

    fn idx(&self, m: usize, node: usize, c: usize, j: usize) -> usize {
        self.offsets[m] + (node * N_COMP + c) * self.n_x() + j
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu
            .solve(rhs)
            .ok_or_else(|| Error::Singular("all-at-once forward matrix".into()))
    }

    fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu
            .solve(rhs)
            .ok_or_else(|| Error::Singular("all-at-once forward matrix".into()))
    }

    pub fn stack(&self, f: &AdaptedField) -> DVector<f64> {
        DVector::from_vec(f.to_flat())
    }

    pub fn unstack(&self, y: &DVector<f64>) -> AdaptedField {
        let mut f = self.spec.lattice().zeros(N_COMP);
        f.fill_from_flat(y.as_slice());
        f
    }

    /// Right-hand side columns of a single-component drift control entering
    /// component `comp`.
    fn drift_columns(&self, space: &ControlSpace, comp: usize) -> DMatrix<f64> {
        let lat = self.spec.lattice();
        let dt = lat.dt();
        let mut d = DMatrix::zeros(self.dim, space.len());
        for (col, &(m, p, j)) in space.dofs.iter().enumerate() {
            for child in children(lat.time.is_noise_step(m), p) {
                d[(self.idx(m + 1, child, comp, j), col)] += dt;
            }
        }
        d
    }

    /// Right-hand side columns of a single-component noise control entering
    /// component `comp`.
    fn noise_columns(&self, space: &ControlSpace, comp: usize) -> DMatrix<f64> {
        let lat = self.spec.lattice();
        let n_x = self.n_x();
        let r = lat.dt() / (lat.h() * lat.h());
        let substeps = lat.time.substeps() as f64;
        let mut d = DMatrix::zeros(self.dim, space.len());
        for (col, &(m, p, j)) in space.dofs.iter().enumerate() {
            let k = lat.level(m);
            let closing = lat.time.interval(k).end - 1;
            for child in [2 * p, 2 * p + 1] {
                let inc = lat.tree.increment(child) / substeps;
                d[(self.idx(closing + 1, child, comp, j), col)] += inc * (1.0 + 2.0 * r);
                if j > 0 {
                    d[(self.idx(closing + 1, child, comp, j - 1), col)] -= inc * r;
                }
                if j + 1 < n_x {
                    d[(self.idx(closing + 1, child, comp, j + 1), col)] -= inc * r;
                }
            }
        }
        d
    }

    fn initial_columns(&self) -> DMatrix<f64> {
        let n = N_COMP * self.n_x();
        let mut d = DMatrix::zeros(self.dim, n);
        for i in 0..n {
            d[(i, i)] = 1.0;
        }
        d
    }

    /// Stacked state driven by `y0` and the leaders, with the followers off.
    pub fn leader_state(&self, y0: &[f64], leaders: &LeaderControls) -> Result<DVector<f64>> {
        let mut b = self.initial_columns() * DVector::from_column_slice(y0);
        let [s1, s2, s3] = &self.leader_spaces;
        b += self.drift_columns(s1, 0) * s1.gather(&leaders.u1);
        b += self.noise_columns(s2, 0) * s2.gather(&leaders.u2);
        b += self.noise_columns(s3, 1) * s3.gather(&leaders.u3);
        self.solve_vec(&b)
    }

    /// State of the open loop with given followers.
    pub fn state(&self, y0: &[f64], leaders: &LeaderControls, followers: &FollowerControls) -> Result<AdaptedField> {
        let mut y = self.leader_state(y0, leaders)?;
        for (i, v) in followers.v.iter().enumerate() {
            y += &self.lambda[i] * self.follower_spaces[i].gather(v);
        }
        Ok(self.unstack(&y))
    }

    /// `y0 -> (Y_0, ..., Y_M)` as a `dim x 2 n_x` matrix.
    pub fn forward_matrix(&self) -> Result<DMatrix<f64>> {
        self.solve(&self.initial_columns())
    }

    /// `y0 -> y(T)`.
    pub fn terminal_map(&self) -> Result<DMatrix<f64>> {
        let full = self.forward_matrix()?;
        let start = self.offsets[self.spec.lattice().steps()];
        Ok(full.rows(start, self.dim - start).into_owned())
    }

    /// `phi_T -> phi(0)` of the source-free backward sweep, one column per
    /// terminal basis vector.
    pub fn backward_initial_map(&self) -> Result<DMatrix<f64>> {
        let lat = self.spec.lattice();
        let n_t = self.dim - self.offsets[lat.steps()];
        let n0 = N_COMP * self.n_x();
        let mut out = DMatrix::zeros(n0, n_t);
        for k in 0..n_t {
            let mut e = vec![0.0; n_t];
            e[k] = 1.0;
            let back = self.spec.propagator().backward_sweep(&e, None)?;
            for (i, v) in back.value.slice(0).iter().enumerate() {
                out[(i, k)] = *v;
            }
        }
        Ok(out)
    }

    /// `max |B - W_0^{-1} F_T^T W_T|` relative to `max |B|`, with `F_T` the
    /// assembled terminal map and `B` the backward initial map.
    pub fn transpose_deviation(&self) -> Result<f64> {
        let f = self.terminal_map()?;
        let b = self.backward_initial_map()?;
        let w0 = self.spec.lattice().h();
        let expected = f.transpose() * (self.terminal_weight / w0);
        Ok((&b - expected).amax() / b.amax().max(f64::MIN_POSITIVE))
    }

    /// `alpha_i Lambda_i^* O` with `Lambda_i^* = W_v^{-1} Lambda_i^T W_run`.
    fn tracking_adjoint(&self, i: usize) -> DMatrix<f64> {
        let weight = self.run_metric.component_mul(&self.observe) * self.spec.alpha[i];
        let mut a = self.lambda[i].transpose();
        for (mut row, w) in a.row_iter_mut().zip(&self.follower_spaces[i].metric) {
            row /= *w;
        }
        for (mut col, w) in a.column_iter_mut().zip(weight.iter()) {
            col *= *w;
        }
        a
    }

    /// The Nash operator on the non-frozen follower unknowns.
    pub fn nash_operator(&self) -> DMatrix<f64> {
        let sizes: Vec<usize> = self.follower_spaces.iter().map(ControlSpace::len).collect();
        let n: usize = sizes.iter().sum();
        let mut l = DMatrix::zeros(n, n);
        let mut row0 = 0;
        for i in 0..sizes.len() {
            let a = self.tracking_adjoint(i);
            let mut col0 = 0;
            for j in 0..sizes.len() {
                let block = &a * &self.lambda[j];
                l.view_mut((row0, col0), (sizes[i], sizes[j])).copy_from(&block);
                col0 += sizes[j];
            }
            let cost = self.spec.cost_weights();
            for (k, &(m, _, _)) in self.follower_spaces[i].dofs.iter().enumerate() {
                l[(row0 + k, row0 + k)] += self.spec.beta[i] * cost[m];
            }
            row0 += sizes[i];
        }
        l
    }

    /// Smallest eigenvalue of the metric-symmetric part of the Nash
    /// operator.
    pub fn nash_coercivity(&self) -> f64 {
        let l = self.nash_operator();
        let sqrt_w: Vec<f64> = self
            .follower_spaces
            .iter()
            .flat_map(|s| s.metric.iter().map(|w| w.sqrt()))
            .collect();
        let s = DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| l[(i, j)] * sqrt_w[i] / sqrt_w[j]);
        let sym = (&s + s.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.min()
    }

    /// Follower equilibrium responding to the stacked open-loop state `q`.
    fn nash_response(&self, q: &DVector<f64>, with_targets: bool) -> Result<Vec<DVector<f64>>> {
        let sizes: Vec<usize> = self.follower_spaces.iter().map(ControlSpace::len).collect();
        let n: usize = sizes.iter().sum();
        let mut rhs = DVector::zeros(n);
        let mut row0 = 0;
        for (i, &size) in sizes.iter().enumerate() {
            let mut diff = q.clone();
            if with_targets {
                diff -= self.stack(&self.spec.targets[i]);
            }
            let ri = -(self.tracking_adjoint(i) * diff);
            rhs.rows_mut(row0, size).copy_from(&ri);
            row0 += size;
        }
        let l = self.nash_operator();
        let x = l
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("Nash operator; increase beta_i".into()))?;
        let mut out = Vec::with_capacity(sizes.len());
        let mut row0 = 0;
        for &size in &sizes {
            out.push(x.rows(row0, size).into_owned());
            row0 += size;
        }
        Ok(out)
    }

    /// Direct solve of the Nash system for the given data.
    pub fn solve_dense_nash(&self, y0: &[f64], leaders: &LeaderControls) -> Result<FollowerControls> {
        if !(self.nash_coercivity() > 0.0) {
            return Err(Error::Singular(
                "symmetric part of the Nash operator is not positive definite; increase beta_i".into(),
            ));
        }
        let q = self.leader_state(y0, leaders)?;
        let parts = self.nash_response(&q, true)?;
        let template = self.spec.lattice().zeros(1);
        Ok(FollowerControls {
            v: parts
                .iter()
                .zip(&self.follower_spaces)
                .map(|(x, s)| s.scatter(x.as_slice(), &template))
                .collect(),
        })
    }

    /// Closed-loop state: open loop plus the equilibrium followers.
    fn close_loop(&self, q: &DVector<f64>, with_targets: bool) -> Result<DVector<f64>> {
        let parts = self.nash_response(q, with_targets)?;
        let mut y = q.clone();
        for (l, x) in self.lambda.iter().zip(&parts) {
            y += l * x;
        }
        Ok(y)
    }

    /// State of the optimality system for given leaders.
    pub fn closed_loop_state(&self, y0: &[f64], leaders: &LeaderControls) -> Result<AdaptedField> {
        let q = self.leader_state(y0, leaders)?;
        Ok(self.unstack(&self.close_loop(&q, true)?))
    }

    fn terminal_rows(&self, y: &DVector<f64>) -> DVector<f64> {
        let start = self.offsets[self.spec.lattice().steps()];
        y.rows(start, self.dim - start).into_owned()
    }

    /// `G = L W_u^{-1} L^T W_T` with `L` the closed-loop map from leader
    /// unknowns to `y(T)` (zero initial state and targets).
    pub fn gramian(&self) -> Result<DenseGramian> {
        let [s1, s2, s3] = &self.leader_spaces;
        let blocks = [
            (self.drift_columns(s1, 0), s1),
            (self.noise_columns(s2, 0), s2),
            (self.noise_columns(s3, 1), s3),
        ];
        let n_t = self.dim - self.offsets[self.spec.lattice().steps()];
        let mut g = DMatrix::zeros(n_t, n_t);
        for (d, space) in &blocks {
            let q = self.solve(d)?;
            let mut l = DMatrix::zeros(n_t, space.len());
            for c in 0..space.len() {
                let y = self.close_loop(&q.column(c).into_owned(), false)?;
                l.set_column(c, &self.terminal_rows(&y));
            }
            let mut scaled = l.clone();
            for (mut col, w) in scaled.column_iter_mut().zip(&space.metric) {
                col /= *w;
            }
            g += scaled * l.transpose() * self.terminal_weight;
        }
        let asymmetry = (&g - g.transpose()).amax() / g.amax().max(f64::MIN_POSITIVE);
        let sym = (&g + g.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        Ok(DenseGramian {
            matrix: g,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            asymmetry,
        })
    }

    /// `y_free(T)`: terminal closed-loop state without leaders.
    pub fn free_terminal(&self, y0: &[f64]) -> Result<DVector<f64>> {
        let leaders = LeaderControls::zeros(self.spec.lattice());
        let q = self.leader_state(y0, &leaders)?;
        Ok(self.terminal_rows(&self.close_loop(&q, true)?))
    }

    /// Pivoted direct solve of `(G + eps I) phi = -y_free(T)` with the
    /// spectral prediction of `|y(T)|`.
    pub fn solve_dense_hum(&self, gram: &DenseGramian, y0: &[f64], epsilon: f64) -> Result<DenseHum> {
        let b = self.free_terminal(y0)?;
        let n = b.len();
        let shifted = &gram.matrix + DMatrix::identity(n, n) * epsilon;
        let phi = shifted
            .lu()
            .solve(&(-&b))
            .ok_or_else(|| Error::Singular("regularised Gramian".into()))?;
        let y_t = &b + &gram.matrix * &phi;
        let terminal_norm = (y_t.norm_squared() * self.terminal_weight).sqrt();
        let b_tilde = gram.eigenvectors.transpose() * &b * self.terminal_weight.sqrt();
        let predicted = gram
            .eigenvalues
            .iter()
            .zip(b_tilde.iter())
            .map(|(&lam, &bk)| (epsilon / (lam + epsilon) * bk).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(DenseHum {
            phi_t: phi.as_slice().to_vec(),
            terminal_norm,
            predicted_terminal_norm: predicted,
        })
    }
}

fn children(noise_step: bool, p: usize) -> Vec<usize> {
    if noise_step {
        vec![2 * p, 2 * p + 1]
    } else {
        vec![p]
    }
}
