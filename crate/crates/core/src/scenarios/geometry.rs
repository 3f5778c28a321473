use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// One lane, parallel to the x-axis, traffic flowing in +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub center_y: f64,
    #[serde(default = "default_lane_width")]
    pub width: f64,
    pub x_extent: (f64, f64),
    /// Where the lane ends, if it does.
    #[serde(default)]
    pub ends_at: Option<f64>,
}

fn default_lane_width() -> f64 {
    3.5
}

impl Lane {
    /// `(lower, upper)` y-interval covered by the lane.
    pub fn band(&self) -> (f64, f64) {
        (
            self.center_y - 0.5 * self.width,
            self.center_y + 0.5 * self.width,
        )
    }
}

/// Road section `[b, c] × [d, e]` with its lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub lanes: Vec<Lane>,
    /// Lane index of the through lane the merger enters.
    pub highway_lane: usize,
    /// Lane index of the on-ramp.
    pub ramp_lane: usize,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        RoadGeometry::merge(3.5, 250.0)
    }
}

impl RoadGeometry {
    /// Highway lane centered on y = 0 with an on-ramp directly below it
    /// ending at `ramp_end`.
    pub fn merge(lane_width: f64, ramp_end: f64) -> Self {
        let x_extent = (0.0, 600.0);
        RoadGeometry {
            x_range: x_extent,
            y_range: (-1.5 * lane_width, 0.5 * lane_width),
            lanes: vec![
                Lane {
                    center_y: 0.0,
                    width: lane_width,
                    x_extent,
                    ends_at: None,
                },
                Lane {
                    center_y: -lane_width,
                    width: lane_width,
                    x_extent,
                    ends_at: Some(ramp_end),
                },
            ],
            highway_lane: 0,
            ramp_lane: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (b, c) = self.x_range;
        let (d, e) = self.y_range;
        if !(b < c && d < e) || ![b, c, d, e].iter().all(|v| v.is_finite()) {
            return Err(GameError::Config(
                "road box must be a nonempty finite rectangle".into(),
            ));
        }
        if self.highway_lane >= self.lanes.len() || self.ramp_lane >= self.lanes.len() {
            return Err(GameError::Config("lane index out of range".into()));
        }
        for (k, lane) in self.lanes.iter().enumerate() {
            if !(lane.width > 0.0) {
                return Err(GameError::Config(format!(
                    "lane {k}: width must be positive"
                )));
            }
            let (lo, hi) = lane.band();
            if lo < d - 1e-9 || hi > e + 1e-9 {
                return Err(GameError::Config(format!(
                    "lane {k}: band outside road box"
                )));
            }
            if let Some(end) = lane.ends_at {
                if end < b || end > c {
                    return Err(GameError::Config(format!(
                        "lane {k}: end {end} outside [{b}, {c}]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: RoadGeometry = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn highway(&self) -> &Lane {
        &self.lanes[self.highway_lane]
    }

    pub fn ramp(&self) -> &Lane {
        &self.lanes[self.ramp_lane]
    }

    /// Lane whose band contains `y`, preferring the highway on a shared edge.
    pub fn lane_at(&self, y: f64) -> Option<usize> {
        let contains = |k: usize| {
            let (lo, hi) = self.lanes[k].band();
            y >= lo && y <= hi
        };
        if contains(self.highway_lane) {
            return Some(self.highway_lane);
        }
        (0..self.lanes.len()).find(|&k| contains(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_is_valid_and_round_trips() {
        let g = RoadGeometry::default();
        g.validate().unwrap();
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(RoadGeometry::from_json(&text).unwrap(), g);
        assert_eq!(g.highway().band(), (-1.75, 1.75));
        assert_eq!(g.ramp().band(), (-5.25, -1.75));
        assert_eq!(g.lane_at(-1.75), Some(0));
        assert_eq!(g.lane_at(-2.0), Some(1));
        assert_eq!(g.lane_at(5.0), None);
    }

    #[test]
    fn lane_end_outside_box_is_rejected() {
        let mut g = RoadGeometry::default();
        g.lanes[1].ends_at = Some(1e4);
        assert!(g.validate().is_err());
    }
}
