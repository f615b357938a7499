//! Space and time lattices, node masks for the control and observation
//! subdomains.

use crate::error::{Error, Result};

/// Uniform grid of the interior nodes of `(0, L)` with homogeneous Dirichlet
/// data at `x = 0` and `x = L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    n_x: usize,
    h: f64,
    length: f64,
    nodes: Vec<f64>,
}

impl SpatialGrid {
    pub fn new(length: f64, n_x: usize) -> Result<Self> {
        if n_x < 3 {
            return Err(Error::InvalidLattice(format!(
                "at least 3 interior nodes required, got {n_x}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidLattice(format!(
                "domain length must be positive, got {length}"
            )));
        }
        let h = length / (n_x + 1) as f64;
        let nodes = (1..=n_x).map(|j| j as f64 * h).collect();
        Ok(Self {
            n_x,
            h,
            length,
            nodes,
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Coordinates of the interior nodes `x_j = j h`, `j = 1..n_x`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Index of the interior node closest to `L/2`.
    pub fn midpoint_index(&self) -> usize {
        let mid = 0.5 * self.length;
        let mut best = 0;
        for (j, &x) in self.nodes.iter().enumerate() {
            if (x - mid).abs() < (self.nodes[best] - mid).abs() - 1e-14 {
                best = j;
            }
        }
        best
    }
}

/// PDE and noise time steps. The horizon is split into `noise_steps`
/// Brownian intervals of length `dt_noise`, each subdivided into `substeps`
/// PDE steps of length `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    noise_steps: usize,
    substeps: usize,
    dt: f64,
    dt_noise: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, noise_steps: usize, substeps: usize) -> Result<Self> {
        if noise_steps < 1 || substeps < 1 {
            return Err(Error::InvalidLattice(format!(
                "noise steps and substeps must be >= 1 (got {noise_steps}, {substeps})"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidLattice(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let steps = noise_steps * substeps;
        let dt = horizon / steps as f64;
        if dt * steps as f64 != horizon {
            return Err(Error::InvalidLattice(format!(
                "horizon {horizon} is not reproduced exactly by {steps} steps of {dt}"
            )));
        }
        Ok(Self {
            horizon,
            noise_steps,
            substeps,
            dt,
            dt_noise: horizon / noise_steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn noise_steps(&self) -> usize {
        self.noise_steps
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dt_noise(&self) -> f64 {
        self.dt_noise
    }

    /// Total number of PDE steps `M = K R`.
    pub fn steps(&self) -> usize {
        self.noise_steps * self.substeps
    }

    /// Tree level `floor(m / R)` reached at time index `m`.
    pub fn level(&self, m: usize) -> usize {
        (m / self.substeps).min(self.noise_steps)
    }

    /// Whether the step `m -> m + 1` closes a noise interval.
    pub fn is_noise_step(&self, m: usize) -> bool {
        (m + 1).is_multiple_of(self.substeps)
    }

    /// Time indices of the PDE steps inside noise interval `k`.
    pub fn interval(&self, k: usize) -> std::ops::Range<usize> {
        k * self.substeps..(k + 1) * self.substeps
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.steps() {
            self.horizon
        } else {
            m as f64 * self.dt
        }
    }
}

/// Indicator of a set of interior nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    on: Vec<bool>,
}

impl Mask {
    pub fn from_bools(on: Vec<bool>) -> Self {
        Self { on }
    }

    pub fn full(n_x: usize) -> Self {
        Self { on: vec![true; n_x] }
    }

    pub fn empty(n_x: usize) -> Self {
        Self {
            on: vec![false; n_x],
        }
    }

    /// Nodes whose coordinate falls in any closed interval `[a, b]`.
    pub fn from_intervals(grid: &SpatialGrid, intervals: &[(f64, f64)]) -> Self {
        let tol = 1e-12 * grid.length();
        let on = grid
            .nodes()
            .iter()
            .map(|&x| intervals.iter().any(|&(a, b)| x >= a - tol && x <= b + tol))
            .collect();
        Self { on }
    }

    pub fn len(&self) -> usize {
        self.on.len()
    }

    pub fn is_empty(&self) -> bool {
        self.on.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.on[j]
    }

    pub fn count(&self) -> usize {
        self.on.iter().filter(|&&b| b).count()
    }

    pub fn none(&self) -> bool {
        self.count() == 0
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.on
    }

    pub fn indicator(&self) -> Vec<f64> {
        self.on.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            on: self.on.iter().zip(&other.on).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.on.iter().zip(&other.on).all(|(a, b)| !*a || *b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.on
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
    }

    /// Maximal runs of consecutive selected nodes as half-open index ranges.
    pub fn runs(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = None;
        for (j, &b) in self.on.iter().enumerate() {
            match (b, start) {
                (true, None) => start = Some(j),
                (false, Some(s)) => {
                    out.push(s..j);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(s..self.on.len());
        }
        out
    }
}

/// Node masks of the leader region `G_0`, the follower regions `G_i`, the
/// common observation region `O_d` and the coupling region `O_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainLayout {
    pub g0: Mask,
    pub followers: Vec<Mask>,
    pub observation: Mask,
    pub o0: Mask,
}

impl SubdomainLayout {
    pub fn new(g0: Mask, followers: Vec<Mask>, observation: Mask, o0: Mask) -> Result<Self> {
        let n = g0.len();
        let all = std::iter::once(&g0)
            .chain(followers.iter())
            .chain([&observation, &o0]);
        for mask in all {
            if mask.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "mask length {} differs from {n}",
                    mask.len()
                )));
            }
        }
        if followers.is_empty() {
            return Err(Error::InvalidLayout("at least one follower region is required".into()));
        }
        if g0.none() {
            return Err(Error::InvalidLayout("G_0 is empty".into()));
        }
        if observation.none() {
            return Err(Error::InvalidLayout("O_d is empty".into()));
        }
        if o0.none() {
            return Err(Error::InvalidLayout("O_0 is empty".into()));
        }
        for (i, gi) in followers.iter().enumerate() {
            if gi.none() {
                return Err(Error::InvalidLayout(format!("G_{} is empty", i + 1)));
            }
            if !g0.and(gi).none() {
                return Err(Error::InvalidLayout(format!(
                    "G_0 and G_{} overlap; the condition G_0 ∩ G_i = ∅ is violated",
                    i + 1
                )));
            }
        }
        if g0.and(&observation).none() {
            return Err(Error::InvalidLayout(
                "G_0 and O_d are disjoint; the condition G_0 ∩ O_d ≠ ∅ is violated".into(),
            ));
        }
        if !o0.is_subset_of(&g0.and(&observation)) {
            return Err(Error::InvalidLayout(
                "O_0 must be contained in G_0 ∩ O_d".into(),
            ));
        }
        Ok(Self {
            g0,
            followers,
            observation,
            o0,
        })
    }

    pub fn follower_count(&self) -> usize {
        self.followers.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_and_width() {
        let g = SpatialGrid::new(1.0, 9).unwrap();
        assert_eq!(g.h(), 0.1);
        assert!((g.nodes()[0] - 0.1).abs() < 1e-15);
        assert!((g.nodes()[8] - 0.9).abs() < 1e-15);
        assert_eq!(g.midpoint_index(), 4);
        assert!(SpatialGrid::new(1.0, 2).is_err());
    }

    #[test]
    fn time_grid_levels() {
        let t = TimeGrid::new(1.0, 3, 2).unwrap();
        assert_eq!(t.steps(), 6);
        let levels: Vec<_> = (0..=6).map(|m| t.level(m)).collect();
        assert_eq!(levels, vec![0, 0, 1, 1, 2, 2, 3]);
        let noise: Vec<_> = (0..6).map(|m| t.is_noise_step(m)).collect();
        assert_eq!(noise, vec![false, true, false, true, false, true]);
        assert_eq!(t.dt() * 6.0, 1.0);
        assert_eq!(t.time(6), 1.0);
        assert!(TimeGrid::new(1.0, 0, 1).is_err());
    }

    #[test]
    fn mask_runs() {
        let m = Mask::from_bools(vec![true, true, false, true, false, true]);
        assert_eq!(m.runs(), vec![0..2, 3..4, 5..6]);
        assert_eq!(m.count(), 4);
    }

    fn layout_masks(g: &SpatialGrid, g1: (f64, f64)) -> Result<SubdomainLayout> {
        SubdomainLayout::new(
            Mask::from_intervals(g, &[(0.3, 0.7)]),
            vec![Mask::from_intervals(g, &[g1])],
            Mask::from_intervals(g, &[(0.2, 0.8)]),
            Mask::from_intervals(g, &[(0.4, 0.6)]),
        )
    }

    #[test]
    fn layout_rejects_overlap_with_leader_region() {
        let g = SpatialGrid::new(1.0, 9).unwrap();
        assert!(layout_masks(&g, (0.05, 0.15)).is_ok());
        let err = layout_masks(&g, (0.1, 0.35)).unwrap_err();
        assert!(err.to_string().contains("G_0 ∩ G_i = ∅"), "{err}");
    }

    #[test]
    fn layout_requires_o0_inside_g0_and_od() {
        let g = SpatialGrid::new(1.0, 9).unwrap();
        let err = SubdomainLayout::new(
            Mask::from_intervals(&g, &[(0.3, 0.7)]),
            vec![Mask::from_intervals(&g, &[(0.05, 0.15)])],
            Mask::from_intervals(&g, &[(0.45, 0.8)]),
            Mask::from_intervals(&g, &[(0.4, 0.6)]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidLayout(_)));
    }
}
