//! Lattices, subdomain masks and Carleman weight tables.

mod carleman;
mod grid;
mod weights;

pub use carleman::{carleman_energy, CarlemanVariant, DEFAULT_LOG_CAP};
pub use grid::{Mask, SpatialGrid, SubdomainLayout, TimeGrid};
pub use weights::{
    build_eta0, build_weight_tables, check_weight_inequalities, ell_at, gamma_at, InequalityReport,
    WeightParams, WeightTables, DEFAULT_LAMBDA, DEFAULT_MU,
};
