//! Game-theoretic trajectory models with a differentiable equilibrium layer.
//!
//! The crate fits parametric common-coupled potential games to observed
//! past/future trajectory pairs, predicts multi-modal joint futures whose
//! modes are local Nash equilibria, and reuses the fitted game for
//! decision-making queries.
//!
//! Layout:
//! - [`game`]: the trajectory-game abstraction, stage-utility decomposition
//!   and the potential function with analytic derivatives.
//! - [`solver`]: log-barrier Newton maximization of the potential over a
//!   polytope plus a local-NE certificate.
//! - [`implicit`]: per-subspace solves wrapped as a differentiable layer.
//! - [`scenarios`]: the on-ramp driving game and the pedestrian encounter.
//! - [`nets`]: small feed-forward nets with exact backpropagation.
//! - [`pipeline`]: forward pass, two-phase training, evaluation and the
//!   decision-transfer query.
//! - [`io`]: scene files, track import, configuration and plot output.

pub mod error;
pub mod game;
pub mod implicit;
pub mod io;
pub mod nets;
pub mod par;
pub mod pipeline;
pub mod scenarios;
pub(crate) mod serde_util;
pub mod solver;

pub use error::{GameError, Result};
pub use game::{GameParams, JointAction, PotentialGame, StageTerms, TimeGrid};
pub use solver::{Polytope, SolveOptions, SolveReport, SolveStatus};
