//! Binomial-tree filtration of the Brownian motion and adapted fields on it.
//!
//! Level `k` of the tree carries `2^k` equally likely nodes. Node `p` at
//! level `k` has children `2p` (increment `+sqrt(dt_noise)`) and `2p + 1`
//! (increment `-sqrt(dt_noise)`) at level `k + 1`. Conditional expectations
//! are therefore exact two-point averages.

use crate::error::{Error, Result};
use crate::lattice_weights::{Mask, SpatialGrid, TimeGrid};

/// Maximum tree depth accepted by [`NoiseTree::new`].
pub const DEFAULT_MAX_LEVELS: usize = 12;

/// Default cap on the scalars stored by a single adapted field.
pub const DEFAULT_FIELD_BUDGET: usize = 1 << 27;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTree {
    levels: usize,
    dt_noise: f64,
    sqrt_dt: f64,
}

impl NoiseTree {
    pub fn new(levels: usize, dt_noise: f64) -> Result<Self> {
        if levels > DEFAULT_MAX_LEVELS {
            return Err(Error::InvalidLattice(format!(
                "{levels} noise levels exceed the limit of {DEFAULT_MAX_LEVELS}"
            )));
        }
        if !(dt_noise > 0.0 && dt_noise.is_finite()) {
            return Err(Error::InvalidLattice(format!("noise step {dt_noise} must be positive")));
        }
        Ok(Self {
            levels,
            dt_noise,
            sqrt_dt: dt_noise.sqrt(),
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dt_noise(&self) -> f64 {
        self.dt_noise
    }

    pub fn nodes_at(level: usize) -> usize {
        1 << level
    }

    /// Brownian increment on the edge leading into `child`.
    pub fn increment(&self, child: usize) -> f64 {
        if child.is_multiple_of(2) {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// `W(t_k)` at a node of level `level`, the sum of the increments along
    /// its path from the root.
    pub fn brownian_value(&self, level: usize, node: usize) -> f64 {
        (0..level)
            .map(|l| {
                let child = node >> (level - l - 1);
                self.increment(child)
            })
            .sum()
    }
}

/// `out[p] = (in[2p] + in[2p+1]) / 2` over blocks of `block` scalars.
pub fn conditional_expectation(level_values: &[f64], block: usize) -> Result<Vec<f64>> {
    check_level(level_values, block)?;
    let parents = level_values.len() / block / 2;
    let mut out = vec![0.0; parents * block];
    for p in 0..parents {
        let up = &level_values[2 * p * block..(2 * p + 1) * block];
        let down = &level_values[(2 * p + 1) * block..(2 * p + 2) * block];
        for ((o, u), d) in out[p * block..(p + 1) * block].iter_mut().zip(up).zip(down) {
            *o = 0.5 * (u + d);
        }
    }
    Ok(out)
}

/// `out[p] = (in[2p] - in[2p+1]) / (2 sqrt(dt_noise))`, the integrand of the
/// discrete martingale representation.
pub fn martingale_coefficient(level_values: &[f64], block: usize, tree: &NoiseTree) -> Result<Vec<f64>> {
    check_level(level_values, block)?;
    let parents = level_values.len() / block / 2;
    let scale = 0.5 / tree.sqrt_dt;
    let mut out = vec![0.0; parents * block];
    for p in 0..parents {
        let up = &level_values[2 * p * block..(2 * p + 1) * block];
        let down = &level_values[(2 * p + 1) * block..(2 * p + 2) * block];
        for ((o, u), d) in out[p * block..(p + 1) * block].iter_mut().zip(up).zip(down) {
            *o = scale * (u - d);
        }
    }
    Ok(out)
}

fn check_level(values: &[f64], block: usize) -> Result<()> {
    if block == 0 || !values.len().is_multiple_of(block) {
        return Err(Error::ShapeMismatch(format!(
            "level of length {} is not a whole number of blocks of {block}",
            values.len()
        )));
    }
    let nodes = values.len() / block;
    if nodes < 2 || !nodes.is_power_of_two() {
        return Err(Error::ShapeMismatch(format!(
            "a child level must hold 2^(k+1) >= 2 nodes, got {nodes}"
        )));
    }
    Ok(())
}

/// Space, time and noise lattices of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    pub tree: NoiseTree,
}

impl Lattice {
    pub fn new(grid: SpatialGrid, time: TimeGrid) -> Result<Self> {
        Self::with_budget(grid, time, DEFAULT_FIELD_BUDGET)
    }

    pub fn with_budget(grid: SpatialGrid, time: TimeGrid, budget: usize) -> Result<Self> {
        let tree = NoiseTree::new(time.noise_steps(), time.dt_noise())?;
        let needed = field_size(&time, 2, grid.n_x());
        if needed > budget {
            return Err(Error::BudgetExceeded { needed, budget });
        }
        Ok(Self { grid, time, tree })
    }

    pub fn n_x(&self) -> usize {
        self.grid.n_x()
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn steps(&self) -> usize {
        self.time.steps()
    }

    pub fn dt(&self) -> f64 {
        self.time.dt()
    }

    pub fn level(&self, m: usize) -> usize {
        self.time.level(m)
    }

    pub fn zeros(&self, n_comp: usize) -> AdaptedField {
        AdaptedField::zeros(&self.time, n_comp, self.n_x())
    }
}

/// Scalars held by an adapted field with `n_comp` components.
pub fn field_size(time: &TimeGrid, n_comp: usize, n_x: usize) -> usize {
    (0..=time.steps())
        .map(|m| NoiseTree::nodes_at(time.level(m)) * n_comp * n_x)
        .sum()
}

/// Space-time random field adapted to the tree filtration: time slice `m`
/// holds one spatial vector of `n_comp` components per node of level
/// `floor(m / R)`. Slice layout is node-major, then component, then space.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField {
    n_comp: usize,
    n_x: usize,
    slices: Vec<Vec<f64>>,
}

impl AdaptedField {
    pub fn zeros(time: &TimeGrid, n_comp: usize, n_x: usize) -> Self {
        let slices = (0..=time.steps())
            .map(|m| vec![0.0; NoiseTree::nodes_at(time.level(m)) * n_comp * n_x])
            .collect();
        Self { n_comp, n_x, slices }
    }

    pub fn try_zeros(time: &TimeGrid, n_comp: usize, n_x: usize, budget: usize) -> Result<Self> {
        let needed = field_size(time, n_comp, n_x);
        if needed > budget {
            return Err(Error::BudgetExceeded { needed, budget });
        }
        Ok(Self::zeros(time, n_comp, n_x))
    }

    /// Field with value `f(m, node, comp, j)` everywhere.
    pub fn from_fn(
        time: &TimeGrid,
        n_comp: usize,
        n_x: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut out = Self::zeros(time, n_comp, n_x);
        for m in 0..out.slices.len() {
            let block = n_comp * n_x;
            for (idx, v) in out.slices[m].iter_mut().enumerate() {
                let node = idx / block;
                let comp = (idx % block) / n_x;
                let j = idx % n_x;
                *v = f(m, node, comp, j);
            }
        }
        out
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn block(&self) -> usize {
        self.n_comp * self.n_x
    }

    pub fn n_times(&self) -> usize {
        self.slices.len()
    }

    pub fn slice(&self, m: usize) -> &[f64] {
        &self.slices[m]
    }

    pub fn slice_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.slices[m]
    }

    pub fn set_slice(&mut self, m: usize, values: Vec<f64>) {
        assert_eq!(values.len(), self.slices[m].len(), "slice {m} length");
        self.slices[m] = values;
    }

    pub fn terminal(&self) -> &[f64] {
        self.slices.last().expect("non-empty field")
    }

    pub fn nodes(&self, m: usize) -> usize {
        self.slices[m].len() / self.block()
    }

    pub fn get(&self, m: usize, node: usize, comp: usize, j: usize) -> f64 {
        self.slices[m][node * self.block() + comp * self.n_x + j]
    }

    pub fn set(&mut self, m: usize, node: usize, comp: usize, j: usize, value: f64) {
        let b = self.block();
        self.slices[m][node * b + comp * self.n_x + j] = value;
    }

    pub fn same_shape(&self, other: &AdaptedField) -> bool {
        self.n_comp == other.n_comp
            && self.n_x == other.n_x
            && self.slices.len() == other.slices.len()
            && self.slices.iter().zip(&other.slices).all(|(a, b)| a.len() == b.len())
    }

    pub fn check_shape(&self, other: &AdaptedField, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(what.to_string()))
        }
    }

    /// Total scalar count across all slices.
    pub fn len(&self) -> usize {
        self.slices.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.slices.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.slices.iter_mut().flatten()
    }

    /// Stacked vector in time-major, node, component, space order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn fill_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat length");
        for (v, x) in self.iter_mut().zip(flat) {
            *v = *x;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &AdaptedField) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += c * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// One component of a multi-component field.
    pub fn component(&self, comp: usize) -> AdaptedField {
        let n_x = self.n_x;
        let block = self.block();
        let slices = self
            .slices
            .iter()
            .map(|s| {
                s.chunks(block)
                    .flat_map(|node| node[comp * n_x..(comp + 1) * n_x].iter().copied())
                    .collect()
            })
            .collect();
        AdaptedField {
            n_comp: 1,
            n_x,
            slices,
        }
    }

    /// Multiplies every spatial vector by the mask indicator.
    pub fn masked(&self, mask: &Mask) -> AdaptedField {
        let mut out = self.clone();
        let n_x = self.n_x;
        for s in &mut out.slices {
            for (idx, v) in s.iter_mut().enumerate() {
                if !mask.contains(idx % n_x) {
                    *v = 0.0;
                }
            }
        }
        out
    }

    /// Zeroes the whole time slice `m`.
    pub fn clear_slice(&mut self, m: usize) {
        self.slices[m].iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `2^{-k} sum_nodes sum_comp sum_x h a b` for two level-`k` slices.
pub fn level_inner(a: &[f64], b: &[f64], nodes: usize, h: f64) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    h * s / nodes as f64
}

/// `E <a(T), b(T)>` over `L^2(G)^n_comp`.
pub fn expect_terminal_inner(a: &AdaptedField, b: &AdaptedField, grid: &SpatialGrid) -> Result<f64> {
    let (sa, sb) = (a.terminal(), b.terminal());
    if sa.len() != sb.len() || a.block() != b.block() || a.n_x() != grid.n_x() {
        return Err(Error::ShapeMismatch("terminal slices differ".into()));
    }
    Ok(level_inner(sa, sb, sa.len() / a.block(), grid.h()))
}

/// `sum_{m < M} dt w_m E <a_m, chi b_m>`: left-endpoint rule in time with an
/// optional node mask and an optional per-time weight. An infinite weight
/// multiplying an exactly vanishing product contributes zero.
pub fn expect_spacetime_inner(
    a: &AdaptedField,
    b: &AdaptedField,
    grid: &SpatialGrid,
    tgrid: &TimeGrid,
    mask: Option<&Mask>,
    time_weight: Option<&[f64]>,
) -> Result<f64> {
    a.check_shape(b, "space-time inner product operands")?;
    if a.n_times() != tgrid.steps() + 1 || a.n_x() != grid.n_x() {
        return Err(Error::ShapeMismatch("field does not live on this lattice".into()));
    }
    if let Some(w) = time_weight {
        if w.len() < tgrid.steps() {
            return Err(Error::ShapeMismatch("time weight too short".into()));
        }
    }
    let n_x = a.n_x();
    let mut total = 0.0;
    for m in 0..tgrid.steps() {
        let (sa, sb) = (a.slice(m), b.slice(m));
        let s: f64 = match mask {
            None => sa.iter().zip(sb).map(|(x, y)| x * y).sum(),
            Some(mask) => sa
                .iter()
                .zip(sb)
                .enumerate()
                .filter(|(idx, _)| mask.contains(idx % n_x))
                .map(|(_, (x, y))| x * y)
                .sum(),
        };
        let s = grid.h() * s / a.nodes(m) as f64;
        let w = time_weight.map_or(1.0, |w| w[m]);
        if w.is_infinite() && s == 0.0 {
            continue;
        }
        total += tgrid.dt() * w * s;
    }
    Ok(total)
}
