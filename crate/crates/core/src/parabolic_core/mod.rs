//! Semi-implicit forward sweeps and their exact discrete adjoints.

mod coupling;
mod propagator;
mod stencil;

pub use coupling::{CouplingField, Matrix2};
pub use propagator::{
    add_into_component, BackwardSolution, DualityTerms, Propagator, SourceKind, SourceSpec, N_COMP,
};
pub use stencil::DiffusionStencil;
