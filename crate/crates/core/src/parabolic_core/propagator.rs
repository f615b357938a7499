//! Forward and backward sweeps of the two-component system on the noise
//! tree.
//!
//! One forward step from `t_m` to `t_{m+1}` is
//!
//! ```text
//! y* = S [ (I + dt A_m) y_m + dt f_m ],      S = (I - dt Delta_h)^{-1}
//! ```
//!
//! followed, on the last sub-step of noise interval `k`, by the branching
//! `y_{m+1}[2p] = y*[p] + sqrt(dtW) gbar_k[p]`,
//! `y_{m+1}[2p+1] = y*[p] - sqrt(dtW) gbar_k[p]`, where `gbar_k` is the mean
//! of the noise source over the sub-steps of the interval.
//!
//! The backward step is the transpose of the forward one. Writing
//! `zhat = E[z_{m+1} | F_m]` and `Z` for the martingale coefficient on a
//! noise step (`zhat = z_{m+1}` otherwise),
//!
//! ```text
//! w_m = S zhat,       z_m = (I + dt A_m^T) w_m - dt F_m,
//! ```
//!
//! which makes the discrete Ito identity exact:
//!
//! ```text
//! E<y_M, z_M> - <y_0, z_0> = sum_m dt E[ <f_m, w_m> + <g_m, Phi_m> + <y_m, F_m> ]
//! ```
//!
//! with `Phi_m = Z` for every `m` in the noise interval.

use rayon::prelude::*;

use super::coupling::CouplingField;
use super::stencil::DiffusionStencil;
use crate::error::{Error, Result};
use crate::lattice_weights::Mask;
use crate::noise_tree::{
    conditional_expectation, expect_spacetime_inner, level_inner, martingale_coefficient,
    AdaptedField, Lattice, NoiseTree,
};

/// Number of state components.
pub const N_COMP: usize = 2;

/// Drift (`f`) and noise (`g`) sources of a forward sweep, two components
/// each. `None` means identically zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceSpec {
    pub drift: Option<AdaptedField>,
    pub noise: Option<AdaptedField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Drift,
    Noise,
}

impl SourceSpec {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Adds `gain * chi_mask * field` to component `comp` of the chosen
    /// source; `field` is a one-component adapted field.
    pub fn add_localized(
        &mut self,
        lattice: &Lattice,
        kind: SourceKind,
        comp: usize,
        mask: Option<&Mask>,
        field: &AdaptedField,
        gain: f64,
    ) {
        let target = match kind {
            SourceKind::Drift => &mut self.drift,
            SourceKind::Noise => &mut self.noise,
        };
        let target = target.get_or_insert_with(|| lattice.zeros(N_COMP));
        add_into_component(target, comp, mask, field, gain);
    }
}

/// `target[comp] += gain * chi_mask * field` node by node.
pub fn add_into_component(
    target: &mut AdaptedField,
    comp: usize,
    mask: Option<&Mask>,
    field: &AdaptedField,
    gain: f64,
) {
    let n_x = target.n_x();
    let block = target.block();
    for m in 0..target.n_times() {
        let src = field.slice(m);
        let dst = target.slice_mut(m);
        for (node, chunk) in src.chunks(n_x).enumerate() {
            let base = node * block + comp * n_x;
            for j in 0..n_x {
                if mask.is_none_or(|mk| mk.contains(j)) {
                    dst[base + j] += gain * chunk[j];
                }
            }
        }
    }
}

/// Output of a backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution {
    /// `z_m`, `m = 0..=M`.
    pub value: AdaptedField,
    /// `w_m = S E[z_{m+1} | F_m]`, `m = 0..M-1` (slice `M` is zero). This is
    /// the field paired with drift sources in the duality identity.
    pub pairing: AdaptedField,
    /// `Phi_m`: the martingale coefficient of the enclosing noise interval,
    /// `m = 0..M-1` (slice `M` is zero).
    pub martingale: AdaptedField,
}

/// Terms of the discrete Ito identity for one forward/backward pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityTerms {
    pub terminal: f64,
    pub initial: f64,
    pub drift: f64,
    pub noise: f64,
    pub state: f64,
}

impl DualityTerms {
    pub fn lhs(&self) -> f64 {
        self.terminal - self.initial
    }

    pub fn rhs(&self) -> f64 {
        self.drift + self.noise + self.state
    }

    /// `|lhs - rhs| / (1 + |lhs| + |rhs|)`.
    pub fn residual(&self) -> f64 {
        let (l, r) = (self.lhs(), self.rhs());
        (l - r).abs() / (1.0 + l.abs() + r.abs())
    }
}

#[derive(Debug, Clone)]
pub struct Propagator {
    lattice: Lattice,
    coupling: CouplingField,
    stencil: DiffusionStencil,
    parallel: bool,
}

impl Propagator {
    pub fn new(lattice: Lattice, coupling: CouplingField) -> Result<Self> {
        if coupling.n_x() != lattice.n_x() || coupling.steps() != lattice.steps() {
            return Err(Error::ShapeMismatch(
                "coupling field is sampled on a different lattice".into(),
            ));
        }
        coupling.check_stability(lattice.dt())?;
        let stencil = DiffusionStencil::new(&lattice.grid, lattice.dt())?;
        Ok(Self {
            lattice,
            coupling,
            stencil,
            parallel: false,
        })
    }

    /// Process tree nodes on the rayon pool. Results are bitwise identical
    /// to the serial path since nodes do not interact within a step.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn coupling(&self) -> &CouplingField {
        &self.coupling
    }

    pub fn stencil(&self) -> &DiffusionStencil {
        &self.stencil
    }

    fn block(&self) -> usize {
        N_COMP * self.lattice.n_x()
    }

    fn for_each_node(&self, out: &mut [f64], f: impl Fn(usize, &mut [f64]) + Sync + Send) {
        let block = self.block();
        if self.parallel {
            out.par_chunks_mut(block).enumerate().for_each(|(p, c)| f(p, c));
        } else {
            out.chunks_mut(block).enumerate().for_each(|(p, c)| f(p, c));
        }
    }

    /// Diffusion-coupling part of step `m` on every node of level `k(m)`:
    /// `S[(I + dt A_m) y + dt f]`.
    fn drift_step(&self, m: usize, y: &[f64], drift: Option<&[f64]>) -> Vec<f64> {
        let n_x = self.lattice.n_x();
        let dt = self.lattice.dt();
        let block = self.block();
        let mut out = vec![0.0; y.len()];
        self.for_each_node(&mut out, |p, o| {
            let yp = &y[p * block..(p + 1) * block];
            for j in 0..n_x {
                let a = self.coupling.at(m, j);
                let (y1, y2) = (yp[j], yp[n_x + j]);
                o[j] = y1 + dt * (a[0][0] * y1 + a[0][1] * y2);
                o[n_x + j] = y2 + dt * (a[1][0] * y1 + a[1][1] * y2);
            }
            if let Some(f) = drift {
                let fp = &f[p * block..(p + 1) * block];
                for (oi, fi) in o.iter_mut().zip(fp) {
                    *oi += dt * fi;
                }
            }
            self.stencil.solve_in_place(&mut o[..n_x]);
            self.stencil.solve_in_place(&mut o[n_x..]);
        });
        out
    }

    /// Mean of the noise source over the sub-steps of noise interval `k`.
    fn averaged_noise(&self, noise: &AdaptedField, k: usize) -> Vec<f64> {
        let range = self.lattice.time.interval(k);
        let count = range.len() as f64;
        let mut out = vec![0.0; noise.slice(range.start).len()];
        for m in range {
            for (o, g) in out.iter_mut().zip(noise.slice(m)) {
                *o += g;
            }
        }
        out.iter_mut().for_each(|v| *v /= count);
        out
    }

    /// `y_{m+1}` from `y_m`, branching on noise steps.
    pub fn forward_step(&self, m: usize, y_m: &[f64], src: &SourceSpec) -> Result<Vec<f64>> {
        let nodes = NoiseTree::nodes_at(self.lattice.level(m));
        if y_m.len() != nodes * self.block() || m >= self.lattice.steps() {
            return Err(Error::ShapeMismatch(format!("state slice at step {m}")));
        }
        let ystar = self.drift_step(m, y_m, src.drift.as_ref().map(|f| f.slice(m)));
        if !self.lattice.time.is_noise_step(m) {
            return Ok(ystar);
        }
        let k = self.lattice.level(m);
        let gbar = src.noise.as_ref().map(|g| self.averaged_noise(g, k));
        let block = self.block();
        let tree = &self.lattice.tree;
        let mut out = vec![0.0; 2 * ystar.len()];
        self.for_each_node(&mut out, |c, o| {
            let p = c / 2;
            o.copy_from_slice(&ystar[p * block..(p + 1) * block]);
            if let Some(g) = &gbar {
                let inc = tree.increment(c);
                for (oi, gi) in o.iter_mut().zip(&g[p * block..(p + 1) * block]) {
                    *oi += inc * gi;
                }
            }
        });
        Ok(out)
    }

    pub fn forward_sweep(&self, y0: &[f64], src: &SourceSpec) -> Result<AdaptedField> {
        let lat = &self.lattice;
        if y0.len() != self.block() {
            return Err(Error::ShapeMismatch(format!(
                "initial datum has length {}, expected {}",
                y0.len(),
                self.block()
            )));
        }
        let mut y = lat.zeros(N_COMP);
        for f in [&src.drift, &src.noise].into_iter().flatten() {
            y.check_shape(f, "source field")?;
        }
        y.slice_mut(0).copy_from_slice(y0);
        for m in 0..lat.steps() {
            let next = self.forward_step(m, y.slice(m), src)?;
            y.set_slice(m + 1, next);
        }
        Ok(y)
    }

    /// One backward step: returns `(z_m, w_m, Z)` with `Z` present on noise
    /// steps.
    pub fn backward_step(
        &self,
        m: usize,
        z_next: &[f64],
        source: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
        let block = self.block();
        let nodes_next = NoiseTree::nodes_at(self.lattice.level(m + 1));
        if z_next.len() != nodes_next * block {
            return Err(Error::ShapeMismatch(format!("adjoint slice at step {}", m + 1)));
        }
        let (zhat, mart) = if self.lattice.time.is_noise_step(m) {
            (
                conditional_expectation(z_next, block)?,
                Some(martingale_coefficient(z_next, block, &self.lattice.tree)?),
            )
        } else {
            (z_next.to_vec(), None)
        };
        let n_x = self.lattice.n_x();
        let dt = self.lattice.dt();
        let mut w = zhat;
        self.for_each_node(&mut w, |_, o| {
            self.stencil.solve_in_place(&mut o[..n_x]);
            self.stencil.solve_in_place(&mut o[n_x..]);
        });
        let mut z = vec![0.0; w.len()];
        self.for_each_node(&mut z, |p, o| {
            let wp = &w[p * block..(p + 1) * block];
            for j in 0..n_x {
                let a = self.coupling.at(m, j);
                let (w1, w2) = (wp[j], wp[n_x + j]);
                o[j] = w1 + dt * (a[0][0] * w1 + a[1][0] * w2);
                o[n_x + j] = w2 + dt * (a[0][1] * w1 + a[1][1] * w2);
            }
            if let Some(f) = source {
                for (oi, fi) in o.iter_mut().zip(&f[p * block..(p + 1) * block]) {
                    *oi -= dt * fi;
                }
            }
        });
        Ok((z, w, mart))
    }

    /// Solves the backward system from the terminal level-`K` slice with
    /// source `F` (two components, `None` for zero).
    pub fn backward_sweep(
        &self,
        terminal: &[f64],
        source: Option<&AdaptedField>,
    ) -> Result<BackwardSolution> {
        let lat = &self.lattice;
        let mut value = lat.zeros(N_COMP);
        if let Some(f) = source {
            value.check_shape(f, "backward source")?;
        }
        if terminal.len() != value.terminal().len() {
            return Err(Error::ShapeMismatch("terminal datum".into()));
        }
        let mut pairing = lat.zeros(N_COMP);
        let mut martingale = lat.zeros(N_COMP);
        let steps = lat.steps();
        value.slice_mut(steps).copy_from_slice(terminal);
        let mut current_z: Option<Vec<f64>> = None;
        for m in (0..steps).rev() {
            let (z, w, mart) = self.backward_step(m, value.slice(m + 1), source.map(|f| f.slice(m)))?;
            if let Some(zk) = mart {
                current_z = Some(zk);
            }
            if let Some(zk) = &current_z {
                martingale.slice_mut(m).copy_from_slice(zk);
            }
            value.set_slice(m, z);
            pairing.set_slice(m, w);
        }
        Ok(BackwardSolution {
            value,
            pairing,
            martingale,
        })
    }

    /// Every term of the discrete Ito identity for a forward solution `y`
    /// with sources `src` and a backward solution with source `F`.
    pub fn duality_terms(
        &self,
        y: &AdaptedField,
        src: &SourceSpec,
        back: &BackwardSolution,
        backward_source: Option<&AdaptedField>,
    ) -> Result<DualityTerms> {
        let lat = &self.lattice;
        let (g, t) = (&lat.grid, &lat.time);
        y.check_shape(&back.value, "forward and backward solutions")?;
        let terminal = level_inner(
            y.terminal(),
            back.value.terminal(),
            y.nodes(lat.steps()),
            lat.h(),
        );
        let initial = level_inner(y.slice(0), back.value.slice(0), 1, lat.h());
        let pair = |a: Option<&AdaptedField>, b: &AdaptedField| -> Result<f64> {
            match a {
                Some(a) => expect_spacetime_inner(a, b, g, t, None, None),
                None => Ok(0.0),
            }
        };
        Ok(DualityTerms {
            terminal,
            initial,
            drift: pair(src.drift.as_ref(), &back.pairing)?,
            noise: pair(src.noise.as_ref(), &back.martingale)?,
            state: pair(backward_source, y)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_weights::{SpatialGrid, TimeGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn propagator(substeps: usize) -> Propagator {
        let grid = SpatialGrid::new(1.0, 7).unwrap();
        let time = TimeGrid::new(0.5, 3, substeps).unwrap();
        let lat = Lattice::new(grid.clone(), time.clone()).unwrap();
        let coupling =
            CouplingField::from_fn(&time, &grid, |t, x| [[0.3 * x, -0.7], [1.1 + t, 0.2 - x]]).unwrap();
        Propagator::new(lat, coupling).unwrap()
    }

    fn random_field(lat: &Lattice, rng: &mut ChaCha8Rng) -> AdaptedField {
        let mut f = lat.zeros(N_COMP);
        f.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        f
    }

    #[test]
    fn zero_data_stays_zero() {
        let p = propagator(2);
        let y = p.forward_sweep(&[0.0; 14], &SourceSpec::zero()).unwrap();
        assert_eq!(y.max_abs(), 0.0);
        let b = p.backward_sweep(&vec![0.0; y.terminal().len()], None).unwrap();
        assert_eq!(b.value.max_abs(), 0.0);
        assert_eq!(b.martingale.max_abs(), 0.0);
    }

    #[test]
    fn ito_identity_with_all_sources() {
        for substeps in [1, 3] {
            let p = propagator(substeps);
            let lat = p.lattice().clone();
            let mut rng = ChaCha8Rng::seed_from_u64(substeps as u64);
            let y0: Vec<f64> = (0..14).map(|_| rng.random_range(-1.0..1.0)).collect();
            let src = SourceSpec {
                drift: Some(random_field(&lat, &mut rng)),
                noise: Some(random_field(&lat, &mut rng)),
            };
            let y = p.forward_sweep(&y0, &src).unwrap();
            let big_f = random_field(&lat, &mut rng);
            let zt = random_field(&lat, &mut rng).terminal().to_vec();
            let b = p.backward_sweep(&zt, Some(&big_f)).unwrap();
            let terms = p.duality_terms(&y, &src, &b, Some(&big_f)).unwrap();
            assert!(terms.residual() <= 1e-13, "{terms:?}");
        }
    }

    #[test]
    fn parallel_matches_serial_bitwise() {
        let p = propagator(2);
        let lat = p.lattice().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = SourceSpec {
            drift: Some(random_field(&lat, &mut rng)),
            noise: Some(random_field(&lat, &mut rng)),
        };
        let y0: Vec<f64> = (0..14).map(|_| rng.random_range(-1.0..1.0)).collect();
        let serial = p.forward_sweep(&y0, &src).unwrap();
        let par = p.clone().with_parallel(true).forward_sweep(&y0, &src).unwrap();
        assert_eq!(serial, par);
    }

    #[test]
    fn localized_source_respects_mask() {
        let p = propagator(1);
        let lat = p.lattice().clone();
        let mask = Mask::from_intervals(&lat.grid, &[(0.2, 0.4)]);
        let mut one = lat.zeros(1);
        one.iter_mut().for_each(|v| *v = 1.0);
        let mut src = SourceSpec::zero();
        src.add_localized(&lat, SourceKind::Drift, 1, Some(&mask), &one, 2.0);
        let f = src.drift.unwrap();
        for j in 0..lat.n_x() {
            assert_eq!(f.get(0, 0, 0, j), 0.0);
            assert_eq!(f.get(0, 0, 1, j), if mask.contains(j) { 2.0 } else { 0.0 });
        }
    }
}
