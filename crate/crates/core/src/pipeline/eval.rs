use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::par::{self, ExecMode};
use crate::scenarios::PastTrajectory;
use crate::solver::SolveOptions;

use super::model::TglModel;
use super::predict::tgl_forward;
use super::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetric {
    pub seconds: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Position errors of the most likely mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    /// One entry per whole second of the horizon.
    pub horizons: Vec<HorizonMetric>,
    /// Means over the per-second entries.
    pub mae_avg: f64,
    pub rmse_avg: f64,
    /// Scenes whose prediction failed and were left out.
    #[serde(default)]
    pub failures: Vec<String>,
    #[serde(default)]
    pub folds: Vec<EvalReport>,
}

/// Per-stage sums of Euclidean errors and their squares.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorAccumulator {
    dt: f64,
    abs: Vec<f64>,
    sq: Vec<f64>,
    count: Vec<usize>,
    scenes: usize,
}

impl ErrorAccumulator {
    pub fn new(stages: usize, dt: f64) -> Self {
        ErrorAccumulator { dt, abs: vec![0.0; stages], sq: vec![0.0; stages], count: vec![0; stages], scenes: 0 }
    }

    pub fn add(&mut self, predicted: &[Vec<[f64; 2]>], truth: &[Vec<[f64; 2]>]) -> Result<()> {
        if predicted.len() != truth.len() {
            return Err(GameError::Shape("agent count mismatch".into()));
        }
        for (p, y) in predicted.iter().zip(truth) {
            if p.len() != self.abs.len() || y.len() != self.abs.len() {
                return Err(GameError::Shape("horizon length mismatch".into()));
            }
            for t in 0..p.len() {
                let e = ((p[t][0] - y[t][0]).powi(2) + (p[t][1] - y[t][1]).powi(2)).sqrt();
                self.abs[t] += e;
                self.sq[t] += e * e;
                self.count[t] += 1;
            }
        }
        self.scenes += 1;
        Ok(())
    }

    pub fn report(&self, failures: Vec<String>) -> Result<EvalReport> {
        if self.scenes == 0 {
            return Err(GameError::Data("no scene could be evaluated".into()));
        }
        let steps_per_second = (1.0 / self.dt).round() as usize;
        let mut horizons = Vec::new();
        let mut s = 1;
        while s * steps_per_second <= self.abs.len() {
            let t = s * steps_per_second - 1;
            let n = self.count[t] as f64;
            horizons.push(HorizonMetric {
                seconds: s as f64,
                mae: self.abs[t] / n,
                rmse: (self.sq[t] / n).sqrt(),
            });
            s += 1;
        }
        if horizons.is_empty() {
            return Err(GameError::Data("horizon shorter than one second".into()));
        }
        let k = horizons.len() as f64;
        Ok(EvalReport {
            scenes: self.scenes,
            mae_avg: horizons.iter().map(|h| h.mae).sum::<f64>() / k,
            rmse_avg: horizons.iter().map(|h| h.rmse).sum::<f64>() / k,
            horizons,
            failures,
            folds: Vec::new(),
        })
    }
}

/// Continues each agent's last finite-difference velocity.
pub fn constant_velocity_prediction(past: &PastTrajectory, stages: usize, dt: f64) -> Result<Vec<Vec<[f64; 2]>>> {
    (0..past.agents.len())
        .map(|i| {
            let a = past.anchor(i)?;
            let v = past.last_velocity(i, dt)?;
            Ok((0..stages)
                .map(|t| {
                    let s = (t + 1) as f64 * dt;
                    [a.prev[0] + v[0] * s, a.prev[1] + v[1] * s]
                })
                .collect())
        })
        .collect()
}

fn check_nonempty(scenes: &[Scene]) -> Result<()> {
    if scenes.is_empty() {
        return Err(GameError::Data("empty dataset".into()));
    }
    Ok(())
}

/// Errors of the most likely mode over a dataset.
pub fn evaluate(model: &TglModel, scenes: &[Scene], solve: &SolveOptions, exec: ExecMode) -> Result<EvalReport> {
    check_nonempty(scenes)?;
    let stages = model.driving.horizon_steps + 1;
    let preds = par::map(exec, scenes, |s| tgl_forward(model, &s.past, &s.geometry, solve, ExecMode::Sequential));
    let mut acc = ErrorAccumulator::new(stages, model.driving.dt);
    let mut failures = Vec::new();
    for (s, p) in scenes.iter().zip(preds) {
        match p {
            Ok(p) => acc.add(&p.best().trajectory, &s.future)?,
            Err(e) => {
                log::warn!("scene {}: {e}", s.id);
                failures.push(format!("{}: {e}", s.id));
            }
        }
    }
    acc.report(failures)
}

pub fn evaluate_constant_velocity(scenes: &[Scene], stages: usize, dt: f64) -> Result<EvalReport> {
    check_nonempty(scenes)?;
    let mut acc = ErrorAccumulator::new(stages, dt);
    for s in scenes {
        acc.add(&constant_velocity_prediction(&s.past, stages, dt)?, &s.future)?;
    }
    acc.report(Vec::new())
}

/// Seeded assignment of scene indices to `k` folds of near-equal size.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(GameError::Data(format!("cannot split {n} scenes into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (p, i) in idx.into_iter().enumerate() {
        folds[p % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Mean of fold reports, keeping the folds.
pub fn aggregate_folds(folds: Vec<EvalReport>) -> Result<EvalReport> {
    let first = folds.first().ok_or_else(|| GameError::Data("no folds".into()))?;
    let k = folds.len() as f64;
    let horizons = (0..first.horizons.len())
        .map(|h| HorizonMetric {
            seconds: first.horizons[h].seconds,
            mae: folds.iter().map(|f| f.horizons[h].mae).sum::<f64>() / k,
            rmse: folds.iter().map(|f| f.horizons[h].rmse).sum::<f64>() / k,
        })
        .collect();
    Ok(EvalReport {
        scenes: folds.iter().map(|f| f.scenes).sum(),
        horizons,
        mae_avg: folds.iter().map(|f| f.mae_avg).sum::<f64>() / k,
        rmse_avg: folds.iter().map(|f| f.rmse_avg).sum::<f64>() / k,
        failures: folds.iter().flat_map(|f| f.failures.clone()).collect(),
        folds,
    })
}

/// Reference rows: averaged MAE / RMSE in meters per dataset and method.
pub const PUBLISHED_REFERENCE: [(&str, &str, f64, f64); 4] = [
    ("highD", "TGL", 3.6, 4.9),
    ("highD", "TGL-D", 2.9, 3.7),
    ("HEE", "TGL", 3.7, 4.7),
    ("HEE", "TGL-D", 3.2, 4.1),
];

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub method: String,
    pub report: EvalReport,
}

/// Dataset × metric × method table of averaged errors, with the
/// published reference values as a footer.
pub fn format_table(rows: &[TableRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<12} {:<8}", "Data set", "Metric");
    for m in &methods {
        let _ = write!(out, " {m:>10}");
    }
    out.push('\n');
    for d in &datasets {
        for (metric, pick) in [("MAE", 0), ("RMSE", 1)] {
            let _ = write!(out, "{d:<12} {metric:<8}");
            for m in &methods {
                let cell = rows
                    .iter()
                    .find(|r| r.dataset == *d && r.method == *m)
                    .map(|r| if pick == 0 { r.report.mae_avg } else { r.report.rmse_avg });
                match cell {
                    Some(v) => {
                        let _ = write!(out, " {v:>10.2}");
                    }
                    None => {
                        let _ = write!(out, " {:>10}", "-");
                    }
                }
            }
            out.push('\n');
        }
    }
    out.push_str("\nReference (published, averaged over 7 s):\n");
    for (d, m, mae, rmse) in PUBLISHED_REFERENCE {
        let _ = writeln!(out, "{d:<12} {m:<8} MAE {mae:.1}  RMSE {rmse:.1}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(offset: f64) -> Vec<Vec<[f64; 2]>> {
        vec![(0..35).map(|t| [t as f64 + offset, 0.0]).collect(); 2]
    }

    #[test]
    fn exact_prediction_has_zero_error() {
        let mut acc = ErrorAccumulator::new(35, 0.2);
        acc.add(&line(0.0), &line(0.0)).unwrap();
        let r = acc.report(vec![]).unwrap();
        assert_eq!(r.horizons.len(), 7);
        assert_eq!(r.mae_avg, 0.0);
        assert_eq!(r.rmse_avg, 0.0);
    }

    #[test]
    fn unit_offset_gives_unit_errors() {
        let mut acc = ErrorAccumulator::new(35, 0.2);
        acc.add(&line(1.0), &line(0.0)).unwrap();
        let r = acc.report(vec![]).unwrap();
        assert!((r.mae_avg - 1.0).abs() < 1e-12 && (r.rmse_avg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn folds_cover_and_balance() {
        let f = fold_assignment(23, 4, 7).unwrap();
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        let sizes: Vec<usize> = f.iter().map(|x| x.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn table_lists_reference_rows() {
        let mut acc = ErrorAccumulator::new(35, 0.2);
        acc.add(&line(1.0), &line(0.0)).unwrap();
        let rows = vec![TableRow { dataset: "synthetic".into(), method: "TGL".into(), report: acc.report(vec![]).unwrap() }];
        let text = format_table(&rows);
        assert!(text.contains("synthetic    MAE            1.00"));
        assert!(text.contains("highD        TGL-D    MAE 2.9  RMSE 3.7"));
    }
}
