use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::JointAction;
use crate::scenarios::{
    action_from_positions, merge_step_of, merge_subspace_index, subspace_label, DrivingConfig,
    DrivingScenario, PastTrajectory, RoadGeometry, HIGHWAY_CAR, MERGER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    #[serde(rename = "highd")]
    HighD,
    #[serde(rename = "hee")]
    Hee,
    Synthetic,
    Other,
}

/// A past/future pair of a two-car merge; agent 0 is the highway car,
/// agent 1 the merger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub source: SourceTag,
    pub dt: f64,
    pub geometry: RoadGeometry,
    pub past: PastTrajectory,
    /// `future[i][t]` for stages `0..=T`.
    pub future: Vec<Vec<[f64; 2]>>,
}

impl Scene {
    pub fn validate(&self, config: &DrivingConfig) -> Result<()> {
        self.geometry.validate()?;
        if (self.dt - config.dt).abs() > 1e-9 {
            return Err(GameError::Data(format!("{}: step {} differs from {}", self.id, self.dt, config.dt)));
        }
        if self.past.agents.len() != 2 || self.future.len() != 2 {
            return Err(GameError::Data(format!("{}: expected two agents", self.id)));
        }
        let stages = config.horizon_steps + 1;
        let (b, c) = self.geometry.x_range;
        let (d, e) = self.geometry.y_range;
        for i in 0..2 {
            if self.past.agents[i].is_empty() {
                return Err(GameError::Data(format!("{}: empty past for agent {i}", self.id)));
            }
            if self.future[i].len() != stages {
                return Err(GameError::Data(format!(
                    "{}: agent {i} future has {} points, expected {stages}",
                    self.id,
                    self.future[i].len()
                )));
            }
            for p in self.past.agents[i].iter().chain(&self.future[i]) {
                if !(p[0].is_finite() && p[1].is_finite()) {
                    return Err(GameError::Data(format!("{}: non-finite position", self.id)));
                }
                if p[0] < b || p[0] > c || p[1] < d || p[1] > e {
                    return Err(GameError::Data(format!("{}: position {p:?} outside the road box", self.id)));
                }
            }
        }
        Ok(())
    }

    pub fn future_action(&self) -> JointAction {
        action_from_positions(&self.future)
    }

    pub fn scenario(&self, config: &DrivingConfig) -> Result<DrivingScenario> {
        DrivingScenario::two_car_merge(self.geometry.clone(), self.past.clone(), config.clone())
    }
}

/// How a scene's subspace label was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// The future lies in the labeled subspace.
    Membership,
    /// No subspace contains the future; merge step and terminal order
    /// decided the label.
    MergeRule,
}

/// Ground-truth subspace of the scene's future.
pub fn label_scene(scene: &Scene, scenario: &DrivingScenario) -> Result<(usize, LabelSource)> {
    let a = scene.future_action();
    match subspace_label(&a, &scenario.polytopes()) {
        Ok(k) => Ok((k, LabelSource::Membership)),
        Err(GameError::NoContainingSubspace) => {
            let layout = scenario.layout();
            let m = merge_step_of(&a, &scenario.geometry, &layout).ok_or(GameError::NoContainingSubspace)?;
            if m == 0 || m >= scenario.config.horizon_steps {
                return Err(GameError::NoContainingSubspace);
            }
            let t = layout.stages - 1;
            let merger_first = a[layout.x(MERGER, t)] > a[layout.x(HIGHWAY_CAR, t)];
            Ok((merge_subspace_index(m, merger_first), LabelSource::MergeRule))
        }
        Err(e) => Err(e),
    }
}
