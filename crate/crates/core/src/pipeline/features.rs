use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::scenarios::{PastTrajectory, RoadGeometry, HIGHWAY_CAR};

/// Normalization of past-window features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureScales {
    pub position_x: f64,
    pub position_y: f64,
    pub velocity_x: f64,
    pub velocity_y: f64,
    /// Every `stride`-th step of the window is used, counting back from
    /// the last one.
    pub stride: usize,
}

impl Default for FeatureScales {
    fn default() -> Self {
        FeatureScales { position_x: 50.0, position_y: 3.5, velocity_x: 30.0, velocity_y: 2.0, stride: 5 }
    }
}

fn sampled_steps(window: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..window).rev().step_by(stride.max(1)).collect::<Vec<_>>().into_iter().rev()
}

pub fn feature_dim(window: usize, stride: usize) -> usize {
    2 * sampled_steps(window, stride).count() * 4 + 1
}

/// The last `window` positions of each agent, padded at the front by
/// constant-velocity back-extrapolation when the past is shorter.
pub fn past_window(past: &PastTrajectory, i: usize, window: usize) -> Result<Vec<[f64; 2]>> {
    let h = past.agents.get(i).ok_or_else(|| GameError::Data(format!("no past for agent {i}")))?;
    if h.is_empty() {
        return Err(GameError::Data(format!("empty past for agent {i}")));
    }
    let n = h.len();
    let v = if n >= 2 { [h[n - 1][0] - h[n - 2][0], h[n - 1][1] - h[n - 2][1]] } else { [0.0, 0.0] };
    let first = h[n.saturating_sub(window)];
    let missing = window.saturating_sub(n);
    let mut out: Vec<[f64; 2]> = (0..missing)
        .map(|k| {
            let back = (missing - k) as f64;
            [first[0] - back * v[0], first[1] - back * v[1]]
        })
        .collect();
    out.extend_from_slice(&h[n.saturating_sub(window)..]);
    Ok(out)
}

/// Positions relative to the highway car's last position plus
/// finite-difference velocities for both agents, and the distance to
/// the ramp end.
pub fn scene_features(
    past: &PastTrajectory,
    geometry: &RoadGeometry,
    window: usize,
    dt: f64,
    scales: &FeatureScales,
) -> Result<Vec<f64>> {
    if window < 2 {
        return Err(GameError::Config("past window must cover at least two steps".into()));
    }
    let reference = *past.agents[HIGHWAY_CAR].last().ok_or_else(|| GameError::Data("empty past".into()))?;
    let mut f = Vec::with_capacity(feature_dim(window, scales.stride));
    for i in 0..2 {
        let w = past_window(past, i, window)?;
        for k in sampled_steps(window, scales.stride) {
            let p = w[k];
            let q = if k == 0 { w[0] } else { w[k - 1] };
            let v = if k == 0 && window > 1 {
                [(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt]
            } else {
                [(p[0] - q[0]) / dt, (p[1] - q[1]) / dt]
            };
            f.push((p[0] - reference[0]) / scales.position_x);
            f.push(p[1] / scales.position_y);
            f.push(v[0] / scales.velocity_x);
            f.push(v[1] / scales.velocity_y);
        }
    }
    let ramp_end = geometry.ramp().ends_at.unwrap_or(geometry.x_range.1);
    f.push((ramp_end - reference[0]) / (2.0 * scales.position_x));
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_past_is_padded_at_constant_velocity() {
        let past = PastTrajectory { agents: vec![vec![[0.0, 0.0], [2.0, 0.0]]] };
        let w = past_window(&past, 0, 4).unwrap();
        assert_eq!(w, vec![[-4.0, 0.0], [-2.0, 0.0], [0.0, 0.0], [2.0, 0.0]]);
    }

    #[test]
    fn feature_length_matches() {
        let past = PastTrajectory { agents: vec![vec![[0.0, 0.0], [2.0, 0.0]], vec![[0.0, -3.5]]] };
        let f = scene_features(&past, &RoadGeometry::default(), 15, 0.2, &FeatureScales::default()).unwrap();
        assert_eq!(f.len(), feature_dim(15, 5));
        assert_eq!(f.len(), 2 * 3 * 4 + 1);
        assert!(f.iter().all(|v| v.is_finite()));
    }
}
