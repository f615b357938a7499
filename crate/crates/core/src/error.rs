use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid subdomain layout: {0}")]
    InvalidLayout(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("memory budget exceeded: {needed} scalars requested, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },

    #[error("exponential clamp activated on {clamped} of {total} nodes (allowed fraction {allowed})")]
    ClampingExceeded {
        clamped: usize,
        total: usize,
        allowed: f64,
    },

    #[error(
        "{what}: fixed-point iteration does not contract (last relative change {last_change:.3e} \
         after {iterations} iterations); increase the follower weights beta_i"
    )]
    NonContraction {
        what: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("{what}: iteration cap {cap} reached (relative change {last_change:.3e})")]
    IterationCap {
        what: &'static str,
        cap: usize,
        last_change: f64,
    },

    #[error("conjugate gradient stagnated at iteration {iteration}: residual {residual:.3e}")]
    CgStagnation { iteration: usize, residual: f64 },

    #[error("observability failure: {0}")]
    Observability(String),

    #[error("dense oracle dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("singular system: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;
