//! The driving merge and pedestrian encounter scenarios.

pub mod driving;
pub mod geometry;
pub mod pedestrian;

pub use driving::{
    action_from_positions, driving_parametrize, enumerate_driving_subspaces, merge_lane_plan,
    merge_step_of, merge_subspace_index, Anchor, DrivingConfig, DrivingGame, DrivingLayout,
    DrivingParams, DrivingScenario, DrivingSubspace, JointTrajectory, PastTrajectory, HIGHWAY_CAR,
    MERGER,
};
pub use geometry::{Lane, RoadGeometry};
pub use pedestrian::{
    enumerate_pedestrian_subspaces, invert_pedestrian_preferences, PedestrianConfig,
    PedestrianGame, PedestrianParams, PedestrianScenario, PedestrianSubspace,
};

use crate::error::{GameError, Result};
use crate::game::JointAction;
use crate::solver::Polytope;

/// Slack violation tolerated when deciding membership.
pub const LABEL_TOL: f64 = 1e-6;

/// Index of the subspace containing `a`; ties go to the smallest total
/// violation, then the lowest index.
pub fn subspace_label(a: &JointAction, subspaces: &[Polytope]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (k, p) in subspaces.iter().enumerate() {
        if p.dim() != a.len() {
            return Err(GameError::Dimension {
                expected: p.dim(),
                got: a.len(),
            });
        }
        if p.min_slack(a.as_slice()) < -LABEL_TOL {
            continue;
        }
        let v = p.total_violation(a.as_slice());
        if best.map_or(true, |(bv, _)| v < bv) {
            best = Some((v, k));
        }
    }
    best.map(|(_, k)| k).ok_or(GameError::NoContainingSubspace)
}
