//! Recorded vehicle tracks: CSV import, resampling and merge-scene
//! extraction.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::pipeline::{Scene, SourceTag};
use crate::scenarios::{PastTrajectory, RoadGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackFormat {
    #[serde(rename = "highd")]
    HighDLike,
    #[serde(rename = "hee")]
    HeeLike,
}

impl TrackFormat {
    pub fn source(self) -> SourceTag {
        match self {
            TrackFormat::HighDLike => SourceTag::HighD,
            TrackFormat::HeeLike => SourceTag::Hee,
        }
    }
}

/// Column names and frame rate of a recording, plus the map into the
/// road frame: `x' = ±x + x_offset`, `y' = ±y + y_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: String,
    pub frame: String,
    pub x: String,
    pub y: String,
    /// Optional longitudinal velocity column.
    pub x_velocity: Option<String>,
    pub frame_rate: f64,
    pub flip_x: bool,
    pub flip_y: bool,
    pub x_offset: f64,
    pub y_offset: f64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            frame: "frame".into(),
            x: "x".into(),
            y: "y".into(),
            x_velocity: Some("xVelocity".into()),
            frame_rate: 25.0,
            flip_x: false,
            flip_y: false,
            x_offset: 0.0,
            y_offset: 0.0,
        }
    }
}

impl ColumnMap {
    pub fn hee() -> Self {
        ColumnMap {
            id: "track_id".into(),
            x_velocity: Some("vx".into()),
            ..ColumnMap::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(GameError::Config("frame rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportConfig {
    pub highd: ColumnMap,
    pub hee: ColumnMap,
    /// Resampling step in seconds.
    pub dt: f64,
    pub past_window: usize,
    /// Final future stage index; the future holds `horizon_steps + 1` points.
    pub horizon_steps: usize,
    /// A third car closer than this to either scene car rejects the scene.
    pub isolation_radius: f64,
    /// Cars farther than this outside the road box's y-range are on another
    /// carriageway and ignored by the isolation test.
    pub isolation_y_margin: f64,
    /// Preferred future step at which the merger enters the highway lane.
    pub merge_lead: usize,
}

impl Default for ImportConfig {
    fn default() -> Self {
        ImportConfig {
            highd: ColumnMap::default(),
            hee: ColumnMap::hee(),
            dt: 0.2,
            past_window: 15,
            horizon_steps: 34,
            isolation_radius: 50.0,
            isolation_y_margin: 3.5,
            merge_lead: 10,
        }
    }
}

impl ImportConfig {
    pub fn validate(&self) -> Result<()> {
        self.highd.validate()?;
        self.hee.validate()?;
        if !(self.dt > 0.0) || self.past_window < 2 || self.horizon_steps < 2 {
            return Err(GameError::Config("import windows out of range".into()));
        }
        if !(self.isolation_radius >= 0.0 && self.isolation_y_margin >= 0.0) {
            return Err(GameError::Config("isolation distances must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn columns(&self, format: TrackFormat) -> &ColumnMap {
        match format {
            TrackFormat::HighDLike => &self.highd,
            TrackFormat::HeeLike => &self.hee,
        }
    }
}

/// A track on the global `dt` grid: `points[k]` is at time
/// `(first_step + k)·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrack {
    pub id: u64,
    pub first_step: i64,
    pub points: Vec<[f64; 2]>,
    pub x_velocity: Option<Vec<f64>>,
}

impl RawTrack {
    pub fn last_step(&self) -> i64 {
        self.first_step + self.points.len() as i64 - 1
    }

    pub fn at(&self, step: i64) -> Option<[f64; 2]> {
        let k = step - self.first_step;
        (k >= 0).then(|| self.points.get(k as usize).copied()).flatten()
    }
}

struct Sample {
    frame: i64,
    p: [f64; 2],
    vx: Option<f64>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| GameError::Data(format!("missing column '{name}'")))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T> {
    let s = rec.get(i).unwrap_or("").trim();
    s.parse().map_err(|_| GameError::Data(format!("line {line}: cannot parse {name} '{s}'")))
}

/// Linear interpolation of `(t, v)` samples at `t`; exact on sample times.
fn interpolate(ts: &[f64], vs: &[f64], seg: usize, t: f64) -> f64 {
    let (ta, tb) = (ts[seg], ts[seg + 1]);
    if (t - ta).abs() <= 1e-9 * (1.0 + ta.abs()) {
        return vs[seg];
    }
    if (t - tb).abs() <= 1e-9 * (1.0 + tb.abs()) {
        return vs[seg + 1];
    }
    let w = (t - ta) / (tb - ta);
    vs[seg] + w * (vs[seg + 1] - vs[seg])
}

fn resample(id: u64, samples: &[Sample], rate: f64, dt: f64, has_v: bool) -> Option<RawTrack> {
    let ts: Vec<f64> = samples.iter().map(|s| s.frame as f64 / rate).collect();
    let first = (ts[0] / dt - 1e-9).ceil() as i64;
    let last = (ts[ts.len() - 1] / dt + 1e-9).floor() as i64;
    if last < first {
        return None;
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.p[0]).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.p[1]).collect();
    let vs: Vec<f64> = samples.iter().map(|s| s.vx.unwrap_or(f64::NAN)).collect();
    let mut points = Vec::new();
    let mut vel = Vec::new();
    let mut seg = 0;
    for k in first..=last {
        let t = k as f64 * dt;
        if ts.len() == 1 {
            points.push([xs[0], ys[0]]);
            vel.push(vs[0]);
            continue;
        }
        while seg + 2 < ts.len() && ts[seg + 1] < t - 1e-9 * (1.0 + t.abs()) {
            seg += 1;
        }
        points.push([interpolate(&ts, &xs, seg, t), interpolate(&ts, &ys, seg, t)]);
        vel.push(interpolate(&ts, &vs, seg, t));
    }
    Some(RawTrack { id, first_step: first, points, x_velocity: has_v.then_some(vel) })
}

/// Reads per-frame rows, groups them by id and resamples each track onto
/// the `dt` grid.
pub fn import_tracks<R: Read>(reader: R, columns: &ColumnMap, dt: f64) -> Result<Vec<RawTrack>> {
    columns.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ci = column(&headers, &columns.id)?;
    let cf = column(&headers, &columns.frame)?;
    let cx = column(&headers, &columns.x)?;
    let cy = column(&headers, &columns.y)?;
    let cv = columns.x_velocity.as_deref().map(|n| column(&headers, n)).transpose()?;
    let sx = if columns.flip_x { -1.0 } else { 1.0 };
    let sy = if columns.flip_y { -1.0 } else { 1.0 };
    let mut by_id: BTreeMap<u64, Vec<Sample>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: u64 = field(&rec, ci, "id", line)?;
        let frame: i64 = field(&rec, cf, "frame", line)?;
        let x: f64 = field(&rec, cx, "x", line)?;
        let y: f64 = field(&rec, cy, "y", line)?;
        let vx = cv.map(|i| field::<f64>(&rec, i, "velocity", line)).transpose()?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(GameError::Data(format!("line {line}: non-finite position")));
        }
        let samples = by_id.entry(id).or_default();
        if let Some(prev) = samples.last() {
            if frame <= prev.frame {
                return Err(GameError::Data(format!(
                    "line {line}: track {id} frames not increasing ({} then {frame})",
                    prev.frame
                )));
            }
        }
        samples.push(Sample {
            frame,
            p: [sx * x + columns.x_offset, sy * y + columns.y_offset],
            vx: vx.map(|v| sx * v),
        });
    }
    Ok(by_id
        .into_iter()
        .filter_map(|(id, s)| resample(id, &s, columns.frame_rate, dt, cv.is_some()))
        .collect())
}

pub fn import_tracks_file(path: &Path, format: TrackFormat, config: &ImportConfig) -> Result<Vec<RawTrack>> {
    if format == TrackFormat::HeeLike {
        log::warn!("HEE-style recordings may be noisy in places; inspect imported scenes before training");
    }
    let f = std::fs::File::open(path).map_err(|e| GameError::Io(format!("{}: {e}", path.display())))?;
    import_tracks(f, config.columns(format), config.dt)
}

/// Writes tracks with `columns`' names, one row per grid step; reading the
/// output back with `frame_rate = 1/dt` reproduces the tracks.
pub fn export_tracks<W: Write>(tracks: &[RawTrack], columns: &ColumnMap, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![columns.id.clone(), columns.frame.clone(), columns.x.clone(), columns.y.clone()];
    if let Some(v) = &columns.x_velocity {
        header.push(v.clone());
    }
    w.write_record(&header)?;
    for t in tracks {
        for (k, p) in t.points.iter().enumerate() {
            let mut row = vec![t.id.to_string(), (t.first_step + k as i64).to_string(), p[0].to_string(), p[1].to_string()];
            if columns.x_velocity.is_some() {
                let v = t.x_velocity.as_ref().map_or(f64::NAN, |v| v[k]);
                row.push(v.to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn in_lane(geometry: &RoadGeometry, lane: usize, p: [f64; 2]) -> bool {
    geometry.lane_at(p[1]) == Some(lane)
}

/// First step after which the track has left the ramp for the highway lane.
fn merge_step(track: &RawTrack, geometry: &RoadGeometry) -> Option<i64> {
    let mut on_ramp = false;
    for (k, p) in track.points.iter().enumerate() {
        if in_lane(geometry, geometry.ramp_lane, *p) {
            on_ramp = true;
        } else if on_ramp && in_lane(geometry, geometry.highway_lane, *p) {
            return Some(track.first_step + k as i64);
        }
    }
    None
}

/// Two-car merge scenes: an on-ramp car entering the highway lane, the
/// nearest car driving in that lane, and no third car within the isolation
/// radius of either during the window.
pub fn filter_merge_scenes(
    tracks: &[RawTrack],
    geometry: &RoadGeometry,
    config: &ImportConfig,
    source: SourceTag,
) -> Vec<Scene> {
    let w = config.past_window as i64;
    let len = w + config.horizon_steps as i64 + 1;
    let (y_lo, y_hi) = (geometry.y_range.0 - config.isolation_y_margin, geometry.y_range.1 + config.isolation_y_margin);
    let mut scenes = Vec::new();
    for m in tracks {
        let Some(c) = merge_step(m, geometry) else { continue };
        let mut candidates: Vec<(&RawTrack, f64)> = tracks
            .iter()
            .filter(|h| h.id != m.id)
            .filter_map(|h| {
                let p = h.at(c)?;
                in_lane(geometry, geometry.highway_lane, p).then(|| (h, (p[0] - m.at(c).unwrap()[0]).abs()))
            })
            .collect();
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
        let Some(&(h, _)) = candidates.first() else { continue };
        // the merge must fall strictly inside the future
        let lo = (c - w - config.horizon_steps as i64 + 1).max(m.first_step).max(h.first_step);
        let hi = (c - w - 1).min(m.last_step() - len + 1).min(h.last_step() - len + 1);
        if lo > hi {
            continue;
        }
        let s = (c - w - config.merge_lead as i64).clamp(lo, hi);
        let window = s..s + len;
        let lanes_ok = window.clone().all(|k| {
            let hp = h.at(k).unwrap();
            in_lane(geometry, geometry.highway_lane, hp)
                && (k >= s + w || in_lane(geometry, geometry.ramp_lane, m.at(k).unwrap()))
        });
        if !lanes_ok {
            continue;
        }
        let isolated = tracks.iter().filter(|o| o.id != m.id && o.id != h.id).all(|o| {
            window.clone().all(|k| match o.at(k) {
                Some(p) if p[1] >= y_lo && p[1] <= y_hi => [h, m].iter().all(|a| {
                    let q = a.at(k).unwrap();
                    (p[0] - q[0]).hypot(p[1] - q[1]) > config.isolation_radius
                }),
                _ => true,
            })
        });
        if !isolated {
            log::debug!("merger {} with {}: third car within {} m", m.id, h.id, config.isolation_radius);
            continue;
        }
        let take = |t: &RawTrack, from: i64, to: i64| (from..to).map(|k| t.at(k).unwrap()).collect::<Vec<_>>();
        let scene = Scene {
            id: format!("{}-{}", m.id, h.id),
            source,
            dt: config.dt,
            geometry: geometry.clone(),
            past: PastTrajectory { agents: vec![take(h, s, s + w), take(m, s, s + w)] },
            future: vec![take(h, s + w, s + len), take(m, s + w, s + len)],
        };
        scenes.push(scene);
    }
    scenes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(id: u64, frames: std::ops::Range<i64>, rate: f64, x0: f64, v: f64, y: impl Fn(f64) -> f64) -> String {
        frames
            .map(|f| {
                let t = f as f64 / rate;
                format!("{id},{f},{},{},{v}\n", x0 + v * t, y(t))
            })
            .collect()
    }

    #[test]
    fn constant_velocity_track_has_constant_increments() {
        let csv = format!("id,frame,x,y,xVelocity\n{}", rows(3, 0..100, 25.0, 10.0, 20.0, |_| 0.0));
        let tracks = import_tracks(csv.as_bytes(), &ColumnMap::default(), 0.2).unwrap();
        assert_eq!(tracks.len(), 1);
        let p = &tracks[0].points;
        assert_eq!(p.len(), 20);
        for k in 1..p.len() {
            assert!((p[k][0] - p[k - 1][0] - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_column_and_bad_order_are_errors() {
        let err = import_tracks("id,frame,x\n1,0,0\n".as_bytes(), &ColumnMap::default(), 0.2).unwrap_err();
        assert!(err.to_string().contains("missing column 'y'"));
        let csv = "id,frame,x,y,xVelocity\n1,5,0,0,1\n1,4,1,0,1\n";
        assert!(import_tracks(csv.as_bytes(), &ColumnMap::default(), 0.2).is_err());
    }

    #[test]
    fn transform_maps_into_road_frame() {
        let cols = ColumnMap { flip_y: true, x_offset: -5.0, y_offset: 1.0, ..ColumnMap::default() };
        let csv = "id,frame,x,y,xVelocity\n1,0,10,2,3\n1,5,11,2,3\n";
        let t = import_tracks(csv.as_bytes(), &cols, 0.2).unwrap();
        assert_eq!(t[0].points, vec![[5.0, -1.0], [6.0, -1.0]]);
    }

    #[test]
    fn export_then_import_is_identity() {
        let csv = format!(
            "id,frame,x,y,xVelocity\n{}{}",
            rows(1, 3..80, 25.0, 0.3, 17.3, |t| 0.1 * t.sin()),
            rows(2, 0..61, 25.0, 5.0, 21.1, |t| -3.5 + 0.2 * t)
        );
        let tracks = import_tracks(csv.as_bytes(), &ColumnMap::default(), 0.2).unwrap();
        let mut out = Vec::new();
        export_tracks(&tracks, &ColumnMap::default(), &mut out).unwrap();
        let cols = ColumnMap { frame_rate: 5.0, ..ColumnMap::default() };
        let back = import_tracks(out.as_slice(), &cols, 0.2).unwrap();
        assert_eq!(back, tracks);
    }

    fn track(id: u64, f: impl Fn(f64) -> [f64; 2]) -> RawTrack {
        RawTrack { id, first_step: 0, points: (0..80).map(|k| f(k as f64)).collect(), x_velocity: None }
    }

    fn merging_pair() -> Vec<RawTrack> {
        vec![
            track(1, |k| [100.0 + 5.0 * k, 0.0]),
            track(2, |k| [90.0 + 4.4 * k, -3.5 + 0.35 * (k - 30.0).clamp(0.0, 10.0)]),
        ]
    }

    #[test]
    fn clean_pair_becomes_a_scene() {
        let mut tracks = merging_pair();
        tracks.push(track(3, |k| [300.0 + 5.0 * k, 0.0]));
        tracks.push(track(4, |k| [95.0 + 4.0 * k, 20.0]));
        let geometry = RoadGeometry::default();
        let cfg = ImportConfig::default();
        let scenes = filter_merge_scenes(&tracks, &geometry, &cfg, SourceTag::Other);
        assert_eq!(scenes.len(), 1);
        let s = &scenes[0];
        assert_eq!(s.id, "2-1");
        assert_eq!(s.past.agents[1].len(), 15);
        assert_eq!(s.future[0].len(), 35);
        s.validate(&crate::scenarios::DrivingConfig::default()).unwrap();
        // merger still on the ramp throughout the past, in the highway lane by the end
        assert!(s.past.agents[1].iter().all(|p| p[1] < -1.75));
        assert!(s.future[1].last().unwrap()[1] > -1.75);
        let m = s.future[1].iter().position(|p| p[1] >= -1.75).unwrap();
        assert_eq!(m, cfg.merge_lead);
    }

    #[test]
    fn third_car_nearby_rejects_the_scene() {
        let mut tracks = merging_pair();
        tracks.push(track(3, |k| [40.0 + 5.0 * k, 0.0]));
        let scenes = filter_merge_scenes(&tracks, &RoadGeometry::default(), &ImportConfig::default(), SourceTag::Other);
        assert!(scenes.is_empty());
    }
}
