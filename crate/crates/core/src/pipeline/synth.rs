//! Noise-free (or noisy) merge scenes generated from known game parameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{GameParams, PotentialGame};
use crate::implicit::SubspaceFamily;
use crate::scenarios::{
    merge_subspace_index, DrivingConfig, DrivingScenario, PastTrajectory, RoadGeometry, HIGHWAY_CAR,
    MERGER,
};
use crate::solver::{maximize_on_polytope, SolveOptions};

use super::model::{expand_compact, ParamPreset};
use super::scene::{Scene, SourceTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub noise_std: f64,
    /// Highway car position at the last observed stage.
    pub highway_x: [f64; 2],
    pub speed: [f64; 2],
    /// Magnitude range of desired minus last speed.
    pub speed_change: [f64; 2],
    /// Merger minus highway-car position at the last observed stage.
    pub offset: [f64; 2],
    /// Minimum |projected gap| three seconds ahead; its sign fixes the order.
    pub min_projected_gap: f64,
    /// Last observed lateral positions the merger is drawn from.
    pub merger_levels: Vec<f64>,
    /// Time constant of the speed relaxation seen in the past.
    pub relax_time: f64,
    pub past_window: usize,
    /// Minimum distance of the lateral path from the lane boundary.
    pub boundary_margin: f64,
    pub preset: ParamPreset,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_scenes: 50,
            noise_std: 0.0,
            highway_x: [100.0, 140.0],
            speed: [20.0, 28.0],
            speed_change: [1.0, 4.0],
            offset: [-30.0, 30.0],
            min_projected_gap: 5.0,
            merger_levels: vec![-2.0, -2.3, -2.6, -2.9, -3.2],
            relax_time: 3.0,
            past_window: 15,
            boundary_margin: 0.005,
            preset: ParamPreset::Terminal,
            max_attempts: 50,
        }
    }
}

/// A generated scene with the parameters and subspace that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub scene: Scene,
    #[serde(with = "crate::serde_util::dvec")]
    pub theta: GameParams,
    pub subspace: usize,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Past x positions at stages `−w..−1` under a speed that relaxes from the
/// past toward `desired` and equals `v_last` at stage −1.
fn relaxed_past_x(x_last: f64, v_last: f64, desired: f64, tau: f64, dt: f64, w: usize) -> Vec<f64> {
    (0..w)
        .rev()
        .map(|back| {
            // `back` steps before stage −1
            let d = back as f64 * dt;
            x_last - desired * d - (v_last - desired) * tau * ((d / tau).exp() - 1.0)
        })
        .collect()
}

/// Lateral block of the potential is quadratic and decoupled from x, so one
/// Newton step from any point lands on its maximizer.
fn lateral_maximizer(scenario: &DrivingScenario, theta: &GameParams, hint: &DVector<f64>) -> Result<DVector<f64>> {
    let game = scenario.game_on(0);
    let l = scenario.layout();
    let g = game.potential_gradient(theta, hint)?;
    let h = game.potential_hessian(theta, hint)?;
    let idx: Vec<usize> = (0..l.stages).map(|t| l.y(MERGER, t)).collect();
    let s = idx.len();
    let hy = DMatrix::from_fn(s, s, |r, c| h[(idx[r], idx[c])]);
    let gy = DVector::from_fn(s, |r, _| g[idx[r]]);
    let step = (-hy).cholesky().ok_or(GameError::SingularHessian)?.solve(&gy);
    Ok(DVector::from_fn(s, |r, _| hint[idx[r]] + step[r]))
}

pub(crate) fn attempt<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    driving: &DrivingConfig,
    geometry: &RoadGeometry,
    solve: &SolveOptions,
    id: String,
    rng: &mut R,
) -> Result<Option<SynthScene>> {
    let dt = driving.dt;
    let w = cfg.past_window.max(2);
    let mut v_last = [0.0; 2];
    let mut desired = [0.0; 2];
    for i in 0..2 {
        v_last[i] = uniform(rng, cfg.speed);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        desired[i] = v_last[i] + sign * uniform(rng, cfg.speed_change);
    }
    let xh = uniform(rng, cfg.highway_x);
    let xm = xh + uniform(rng, cfg.offset);
    let projected = xm - xh + 3.0 * (v_last[MERGER] - v_last[HIGHWAY_CAR]);
    if projected.abs() < cfg.min_projected_gap {
        return Ok(None);
    }
    let merger_first = projected >= 0.0;
    let level = cfg.merger_levels[rng.random_range(0..cfg.merger_levels.len())];
    let hw_center = geometry.highway().center_y;

    let mut compact = [[1.0; 6]; 2];
    for i in 0..2 {
        compact[i][0] = desired[i];
    }
    let theta = expand_compact(driving, cfg.preset, &compact, 1.0);

    let x_past = [
        relaxed_past_x(xh, v_last[0], desired[0], cfg.relax_time, dt, w),
        relaxed_past_x(xm, v_last[1], desired[1], cfg.relax_time, dt, w),
    ];
    // provisional lateral past: flat, replaced once the lateral speed is known
    let mut past = PastTrajectory {
        agents: vec![
            x_past[0].iter().map(|&x| [x, hw_center]).collect(),
            x_past[1].iter().map(|&x| [x, level]).collect(),
        ],
    };
    let scenario = DrivingScenario::two_car_merge(geometry.clone(), past.clone(), driving.clone())?;
    let hint = DVector::from_vec(
        scenario.subspaces[0].polytope.hint.clone().ok_or_else(|| GameError::Data("subspace without hint".into()))?,
    );
    let y = lateral_maximizer(&scenario, &theta, &hint)?;
    let (lo, hi) = geometry.highway().band();

    if y.iter().any(|&v| (v - lo).abs() < cfg.boundary_margin || v > hi - cfg.boundary_margin) {
        return Ok(None);
    }
    let Some(m) = y.iter().position(|&v| v >= lo) else { return Ok(None) };
    if m == 0 || m >= driving.horizon_steps {
        return Ok(None);
    }
    // lateral past at the path's initial lateral speed
    let vy = (y[0] - level) / dt;
    let floor = geometry.ramp().band().0 + 0.25;
    let n = past.agents[1].len();
    for (j, p) in past.agents[1].iter_mut().enumerate() {
        let back = (n - 1 - j) as f64;
        p[1] = (level - vy * back * dt).max(floor.min(level));
    }
    let scenario = DrivingScenario::two_car_merge(geometry.clone(), past.clone(), driving.clone())?;
    let k = merge_subspace_index(m, merger_first);
    let report = maximize_on_polytope(scenario.game_on(k), &theta, SubspaceFamily::polytope(&scenario, k), solve)?;
    if !report.converged() {
        return Ok(None);
    }
    let l = scenario.layout();
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| GameError::Config(e.to_string()))?;
    let future = (0..2)
        .map(|i| {
            (0..l.stages)
                .map(|t| {
                    let mut p = [report.argmax[l.x(i, t)], report.argmax[l.y(i, t)]];
                    if cfg.noise_std > 0.0 {
                        p[0] += noise.sample(rng);
                        p[1] += noise.sample(rng);
                    }
                    p
                })
                .collect()
        })
        .collect();
    let scene = Scene { id, source: SourceTag::Synthetic, dt, geometry: geometry.clone(), past, future };
    if scene.validate(driving).is_err() {
        return Ok(None);
    }
    Ok(Some(SynthScene { scene, theta, subspace: k }))
}

/// Samples parameters and a merge, solves the matching subspace and emits
/// the equilibrium as the future. Attempts that fail are resampled.
pub fn synth_generate<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    driving: &DrivingConfig,
    geometry: &RoadGeometry,
    solve: &SolveOptions,
    rng: &mut R,
) -> Result<Vec<SynthScene>> {
    if cfg.merger_levels.is_empty() {
        return Err(GameError::Config("no merger levels".into()));
    }
    let mut out = Vec::with_capacity(cfg.n_scenes);
    for s in 0..cfg.n_scenes {
        let mut made = None;
        for _ in 0..cfg.max_attempts {
            match attempt(cfg, driving, geometry, solve, format!("synthetic-{s:03}"), rng) {
                Ok(Some(x)) => {
                    made = Some(x);
                    break;
                }
                Ok(None) => {}
                Err(e) => log::debug!("synthetic attempt failed: {e}"),
            }
        }
        out.push(made.ok_or_else(|| GameError::Data(format!("scene {s}: no valid sample after {} attempts", cfg.max_attempts)))?);
    }
    Ok(out)
}
