//! Versioned JSON scene files.
//!
//! ```json
//! { "version": 1,
//!   "scenes": [ { "id": "...", "source": "highd", "dt": 0.2,
//!                 "geometry": { ... },
//!                 "agents": [ { "role": "highway", "past": [[t, x, y], ...], "future": [[t, x, y], ...] },
//!                             { "role": "merger",  "past": [...], "future": [...] } ] } ] }
//! ```
//!
//! Past timestamps end at `-dt`, future timestamps start at `0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::pipeline::{Scene, SourceTag};
use crate::scenarios::{PastTrajectory, RoadGeometry};

pub const SCENE_FILE_VERSION: u32 = 1;

/// Agreement required between stored timestamps and the step grid.
const TIME_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Highway,
    Merger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub role: Role,
    pub past: Vec<[f64; 3]>,
    pub future: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub source: SourceTag,
    pub dt: f64,
    pub geometry: RoadGeometry,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    pub scenes: Vec<SceneRecord>,
}

fn stamp(points: &[[f64; 2]], first: i64, dt: f64) -> Vec<[f64; 3]> {
    points
        .iter()
        .enumerate()
        .map(|(k, p)| [(first + k as i64) as f64 * dt, p[0], p[1]])
        .collect()
}

fn unstamp(id: &str, what: &str, points: &[[f64; 3]], first: i64, dt: f64) -> Result<Vec<[f64; 2]>> {
    let mut prev = f64::NEG_INFINITY;
    points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if !(p[0] > prev) {
                return Err(GameError::Data(format!("{id}: {what} timestamps not increasing")));
            }
            prev = p[0];
            let expect = (first + k as i64) as f64 * dt;
            if (p[0] - expect).abs() > TIME_TOL {
                return Err(GameError::Data(format!(
                    "{id}: {what} timestamp {} off the {dt} s grid (expected {expect})",
                    p[0]
                )));
            }
            Ok([p[1], p[2]])
        })
        .collect()
}

impl SceneRecord {
    pub fn from_scene(scene: &Scene) -> Self {
        let agents = [Role::Highway, Role::Merger]
            .into_iter()
            .enumerate()
            .map(|(i, role)| {
                let past = &scene.past.agents[i];
                AgentRecord {
                    role,
                    past: stamp(past, -(past.len() as i64), scene.dt),
                    future: stamp(&scene.future[i], 0, scene.dt),
                }
            })
            .collect();
        SceneRecord {
            id: scene.id.clone(),
            source: scene.source,
            dt: scene.dt,
            geometry: scene.geometry.clone(),
            agents,
        }
    }

    pub fn to_scene(&self) -> Result<Scene> {
        if !(self.dt > 0.0) {
            return Err(GameError::Data(format!("{}: step must be positive", self.id)));
        }
        let mut past = vec![Vec::new(), Vec::new()];
        let mut future = vec![Vec::new(), Vec::new()];
        for (i, role) in [Role::Highway, Role::Merger].into_iter().enumerate() {
            let rec = match self.agents.iter().filter(|a| a.role == role).collect::<Vec<_>>()[..] {
                [r] => r,
                _ => return Err(GameError::Data(format!("{}: need exactly one {role:?} agent", self.id))),
            };
            past[i] = unstamp(&self.id, "past", &rec.past, -(rec.past.len() as i64), self.dt)?;
            future[i] = unstamp(&self.id, "future", &rec.future, 0, self.dt)?;
        }
        if self.agents.len() != 2 {
            return Err(GameError::Data(format!("{}: expected two agents", self.id)));
        }
        Ok(Scene {
            id: self.id.clone(),
            source: self.source,
            dt: self.dt,
            geometry: self.geometry.clone(),
            past: PastTrajectory { agents: past },
            future,
        })
    }
}

impl SceneFile {
    pub fn from_scenes(scenes: &[Scene]) -> Self {
        SceneFile { version: SCENE_FILE_VERSION, scenes: scenes.iter().map(SceneRecord::from_scene).collect() }
    }

    pub fn to_scenes(&self) -> Result<Vec<Scene>> {
        if self.version != SCENE_FILE_VERSION {
            return Err(GameError::Data(format!(
                "scene file version {} unsupported (expected {SCENE_FILE_VERSION})",
                self.version
            )));
        }
        self.scenes.iter().map(SceneRecord::to_scene).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    std::fs::write(path, SceneFile::from_scenes(scenes).to_json()?)
        .map_err(|e| GameError::Io(format!("{}: {e}", path.display())))
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    let text = std::fs::read_to_string(path).map_err(|e| GameError::Io(format!("{}: {e}", path.display())))?;
    SceneFile::from_json(&text)?.to_scenes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Scene {
        let line = |x0: f64, y: f64, n: usize, v: f64| (0..n).map(|k| [x0 + v * 0.2 * k as f64, y]).collect::<Vec<_>>();
        Scene {
            id: "s".into(),
            source: SourceTag::Synthetic,
            dt: 0.2,
            geometry: RoadGeometry::default(),
            past: PastTrajectory { agents: vec![line(100.0, 0.0, 3, 25.0), line(95.0, -3.5, 3, 22.0)] },
            future: vec![line(115.0, 0.0, 4, 25.0), line(108.2, -3.3, 4, 22.0)],
        }
    }

    #[test]
    fn scene_round_trip_is_exact() {
        let s = scene();
        let text = SceneFile::from_scenes(std::slice::from_ref(&s)).to_json().unwrap();
        let back = SceneFile::from_json(&text).unwrap().to_scenes().unwrap();
        assert_eq!(back, vec![s.clone()]);
        assert_eq!(SceneFile::from_scenes(&back).to_json().unwrap(), text);
    }

    #[test]
    fn timestamps_follow_the_grid() {
        let r = SceneRecord::from_scene(&scene());
        assert_eq!(r.agents[0].past.last().unwrap()[0], -0.2);
        assert_eq!(r.agents[0].future[0][0], 0.0);
    }

    #[test]
    fn rejects_broken_records() {
        let mut f = SceneFile::from_scenes(&[scene()]);
        f.version = 99;
        assert!(f.to_scenes().is_err());
        let mut f = SceneFile::from_scenes(&[scene()]);
        f.scenes[0].agents[1].future[2][0] = 0.1;
        assert!(f.to_scenes().is_err());
        let mut f = SceneFile::from_scenes(&[scene()]);
        f.scenes[0].agents[1].role = Role::Highway;
        assert!(f.to_scenes().is_err());
    }
}
