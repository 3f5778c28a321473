//! Constrained maximization of the potential over a polytope.

mod barrier;
mod certificate;
mod polytope;

pub use barrier::{
    find_interior_point, maximize_on_polytope, SolveOptions, SolveReport, SolveStatus,
};
pub use certificate::{verify_local_ne, LOCAL_NE_TOL};
pub use polytope::{ConstraintKind, LinearConstraint, Polytope, PolytopeBuilder};
