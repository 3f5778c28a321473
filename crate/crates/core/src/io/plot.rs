//! Plot output: an SVG of past, ground truth and predicted modes, and the
//! same points as a tidy CSV.

use std::fmt::Write as _;

use crate::error::Result;
use crate::pipeline::Prediction;
use crate::scenarios::RoadGeometry;

/// One polyline: `(t, x, y)` points of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub agent: usize,
    pub points: Vec<[f64; 3]>,
}

const PALETTE: [&str; 8] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

pub fn prediction_series(prediction: &Prediction, truth: Option<&[Vec<[f64; 2]>]>, dt: f64) -> Vec<Series> {
    let mut out = Vec::new();
    for (i, past) in prediction.past.agents.iter().enumerate() {
        let n = past.len() as f64;
        let points = past.iter().enumerate().map(|(k, p)| [(k as f64 - n) * dt, p[0], p[1]]).collect();
        out.push(Series { name: "past".into(), agent: i, points });
    }
    let future = |traj: &[[f64; 2]]| traj.iter().enumerate().map(|(k, p)| [k as f64 * dt, p[0], p[1]]).collect();
    if let Some(truth) = truth {
        for (i, tr) in truth.iter().enumerate() {
            out.push(Series { name: "ground truth".into(), agent: i, points: future(tr) });
        }
    }
    for (j, m) in prediction.modes.iter().enumerate() {
        for (i, tr) in m.trajectory.iter().enumerate() {
            out.push(Series {
                name: format!("mode {j} (w={:.2}): {}", m.weight, m.description),
                agent: i,
                points: future(tr),
            });
        }
    }
    out
}

pub fn series_csv(series: &[Series]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "agent", "t", "x", "y"])?;
    for s in series {
        for p in &s.points {
            w.write_record([s.name.clone(), s.agent.to_string(), p[0].to_string(), p[1].to_string(), p[2].to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| crate::error::GameError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Nice tick spacing for a span.
fn tick_step(span: f64) -> f64 {
    let raw = span / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

/// Road view with x in meters along the horizontal axis; y is stretched to
/// keep lanes readable. Highway car solid, merger dashed.
pub fn series_svg(series: &[Series], geometry: &RoadGeometry) -> String {
    let (w, h, left, right, top, bottom) = (960.0, 360.0, 60.0, 320.0, 20.0, 50.0);
    let pts = series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1) = pts.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p[1]), a.1.max(p[1])));
    if !x0.is_finite() {
        (x0, x1) = geometry.x_range;
    }
    if x1 - x0 < 1.0 {
        x1 = x0 + 1.0;
    }
    let pad = 0.03 * (x1 - x0);
    let (x0, x1) = (x0 - pad, x1 + pad);
    let (y0, y1) = geometry.y_range;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    for lane in &geometry.lanes {
        let (lo, hi) = lane.band();
        let xa = lane.x_extent.0.max(x0);
        let xb = lane.ends_at.unwrap_or(lane.x_extent.1).min(lane.x_extent.1).min(x1);
        if xb > xa {
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#eeeeee" stroke="#999999"/>"##,
                sx(xa),
                sy(hi),
                sx(xb) - sx(xa),
                sy(lo) - sy(hi)
            );
        }
    }
    let axis_y = h - bottom;
    let _ = writeln!(s, r#"<line x1="{left}" y1="{axis_y}" x2="{:.2}" y2="{axis_y}" stroke="black"/>"#, w - right);
    let step = tick_step(x1 - x0);
    let mut t = (x0 / step).ceil() * step;
    while t <= x1 {
        let px = sx(t);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{axis_y}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, axis_y + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{t}</text>"#, axis_y + 18.0);
        t += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">x [m]</text>"#,
        0.5 * (left + w - right),
        h - 8.0
    );
    let mut names: Vec<&str> = Vec::new();
    for ser in series {
        if !names.contains(&ser.name.as_str()) {
            names.push(&ser.name);
        }
    }
    let color = |name: &str| match name {
        "past" => "#000000",
        "ground truth" => "#7f7f7f",
        _ => PALETTE[names.iter().position(|n| *n == name).unwrap_or(0) % PALETTE.len()],
    };
    for ser in series {
        if ser.points.is_empty() {
            continue;
        }
        let path: Vec<String> = ser.points.iter().map(|p| format!("{:.2},{:.2}", sx(p[1]), sy(p[2]))).collect();
        let dash = if ser.agent == 0 { "" } else { r#" stroke-dasharray="6,3""# };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
            path.join(" "),
            color(&ser.name)
        );
    }
    for (k, name) in names.iter().enumerate() {
        let ly = top + 10.0 + 18.0 * k as f64;
        let lx = w - right + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="3"/>"#, lx + 20.0, color(name));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Mode;
    use crate::scenarios::PastTrajectory;

    fn prediction() -> Prediction {
        let line = |x: f64, y: f64, n: usize| (0..n).map(|k| [x + 5.0 * k as f64, y]).collect::<Vec<_>>();
        Prediction {
            modes: vec![Mode {
                subspace: 3,
                description: "merge at 2 <ahead>".into(),
                weight: 1.0,
                trajectory: vec![line(110.0, 0.0, 4), line(100.0, -3.0, 4)],
                potential: 0.0,
            }],
            most_likely: 0,
            theta: vec![],
            past: PastTrajectory { agents: vec![line(100.0, 0.0, 2), line(90.0, -3.5, 2)] },
        }
    }

    #[test]
    fn csv_is_tidy() {
        let s = prediction_series(&prediction(), None, 0.2);
        let text = series_csv(&s).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("series,agent,t,x,y"));
        assert_eq!(lines.count(), 2 * 2 + 2 * 4);
    }

    #[test]
    fn svg_escapes_and_closes() {
        let p = prediction();
        let truth = p.modes[0].trajectory.clone();
        let svg = series_svg(&prediction_series(&p, Some(&truth), 0.2), &RoadGeometry::default());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;ahead&gt;"));
        assert!(svg.contains("ground truth"));
    }
}
