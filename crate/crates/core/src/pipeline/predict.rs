use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::implicit::forward;
use crate::par::ExecMode;
use crate::scenarios::{driving_parametrize, DrivingScenario, PastTrajectory, RoadGeometry};
use crate::solver::SolveOptions;

use super::model::TglModel;

/// One predicted joint trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub subspace: usize,
    pub description: String,
    pub weight: f64,
    /// `trajectory[i][t]`.
    pub trajectory: Vec<Vec<[f64; 2]>>,
    pub potential: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub modes: Vec<Mode>,
    /// Index into `modes` of the highest weight.
    pub most_likely: usize,
    /// Revealed game parameters.
    pub theta: Vec<f64>,
    /// Past used for the prediction, for plotting.
    pub past: PastTrajectory,
}

impl Prediction {
    pub fn best(&self) -> &Mode {
        &self.modes[self.most_likely]
    }
}

/// Preference revelation, refinement, per-subspace solves and
/// parametrization for one past.
pub fn tgl_forward(
    model: &TglModel,
    past: &PastTrajectory,
    geometry: &RoadGeometry,
    solve: &SolveOptions,
    exec: ExecMode,
) -> Result<Prediction> {
    let features = model.features(past, geometry)?;
    let (refined, weighting) = model.refine(&features)?;
    let (theta, _) = model.reveal::<rand::rngs::ThreadRng>(&features, past, refined.merger_in_front(), None)?;
    let scenario = DrivingScenario::two_car_merge(geometry.clone(), past.clone(), model.driving.clone())?;
    let result = forward(&scenario, &theta, &refined.refined, solve, exec)?;
    let layout = scenario.layout();
    let mut modes = Vec::new();
    for (&k, &w) in refined.refined.iter().zip(&weighting.weights) {
        let Some(report) = result.solutions.get(&k) else { continue };
        let traj = driving_parametrize(&report.argmax, past, &layout, model.driving.dt)?;
        modes.push(Mode {
            subspace: k,
            description: scenario.subspaces[k].polytope.description.clone(),
            weight: w,
            trajectory: traj.positions,
            potential: report.potential_value,
        });
    }
    let total: f64 = modes.iter().map(|m| m.weight).sum();
    if modes.is_empty() || !(total > 0.0) {
        return Err(GameError::AllSubspacesFailed("no refined subspace produced a mode".into()));
    }
    for m in &mut modes {
        m.weight /= total;
    }
    let mut most_likely = 0;
    for (j, m) in modes.iter().enumerate() {
        if m.weight > modes[most_likely].weight {
            most_likely = j;
        }
    }
    Ok(Prediction { modes, most_likely, theta: theta.iter().copied().collect(), past: past.clone() })
}
