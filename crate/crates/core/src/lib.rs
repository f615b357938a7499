//! Hierarchic (Stackelberg-Nash) null controllability experiments for a
//! coupled pair of linear stochastic heat equations on an interval.
//!
//! One leader acts on the drift through `G_0` and on both diffusion terms;
//! several followers act on the drift through disjoint regions `G_i` and
//! minimise tracking functionals. The crate discretises the forward and
//! backward stochastic systems on a binomial noise tree, solves the
//! follower Nash equilibrium and the leader's penalised HUM problem, and
//! provides a dense all-at-once oracle for small instances.

pub mod config;
pub mod error;
pub mod hum_leader;
pub mod lattice_weights;
pub mod nash;
pub mod noise_tree;
pub mod oracle;
pub mod parabolic_core;
pub mod picard;
pub mod systems;

pub use error::{Error, Result};
