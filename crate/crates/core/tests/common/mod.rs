//! Shared instance generators and finite-difference oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use trajgame::game::{GameParams, JointAction, PotentialGame};
use trajgame::pipeline::{expand_compact, ParamPreset};
use trajgame::scenarios::{
    DrivingConfig, DrivingScenario, PastTrajectory, PedestrianConfig, PedestrianParams, PedestrianScenario,
    RoadGeometry,
};
use trajgame::solver::{find_interior_point, Polytope};

pub fn pedestrian<R: Rng>(rng: &mut R) -> (PedestrianScenario, GameParams) {
    let config = PedestrianConfig {
        z: [rng.random_range(-8.0..-2.0), rng.random_range(-8.0..-2.0)],
        dist_weight: rng.random_range(0.2..3.0),
        ..PedestrianConfig::default()
    };
    let theta = PedestrianParams {
        vel_weight: [rng.random_range(0.3..3.0), rng.random_range(0.3..3.0)],
        desired_speed: [rng.random_range(0.5..2.8), rng.random_range(0.5..2.8)],
    }
    .to_vector();
    (PedestrianScenario::new(config).unwrap(), theta)
}

/// Straight-line past: highway car at `y = 0`, merger on the ramp.
pub fn straight_past(x_h: f64, v_h: f64, x_m: f64, v_m: f64, y_m: f64, dt: f64, w: usize) -> PastTrajectory {
    let line = |x: f64, v: f64, y: f64| (0..w).map(|k| [x - v * dt * (w - 1 - k) as f64, y]).collect::<Vec<_>>();
    PastTrajectory { agents: vec![line(x_h, v_h, 0.0), line(x_m, v_m, y_m)] }
}

pub fn driving_theta<R: Rng>(rng: &mut R, config: &DrivingConfig, preset: ParamPreset) -> GameParams {
    let mut c = [[0.0; 6]; 2];
    for row in &mut c {
        row[0] = rng.random_range(15.0..30.0);
        for v in &mut row[1..] {
            *v = rng.random_range(0.3..3.0);
        }
    }
    expand_compact(config, preset, &c, rng.random_range(0.3..5.0))
}

pub fn driving<R: Rng>(rng: &mut R, horizon_steps: usize) -> (DrivingScenario, GameParams) {
    let config = DrivingConfig { horizon_steps, ..DrivingConfig::default() };
    let x_h = rng.random_range(60.0..140.0);
    let past = straight_past(
        x_h,
        rng.random_range(18.0..28.0),
        x_h + rng.random_range(-30.0..30.0),
        rng.random_range(18.0..28.0),
        rng.random_range(-4.5..-2.5),
        config.dt,
        15,
    );
    let preset = if rng.random::<bool>() { ParamPreset::Terminal } else { ParamPreset::AllStages };
    let theta = driving_theta(rng, &config, preset);
    (DrivingScenario::two_car_merge(RoadGeometry::default(), past, config).unwrap(), theta)
}

/// Largest `t` with `a + t·d` inside the polytope.
pub fn ray_extent(poly: &Polytope, a: &[f64], d: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for c in poly.constraints() {
        let gd: f64 = c.terms.iter().map(|&(j, v)| v * d[j]).sum();
        if gd > 1e-15 {
            t = t.min(c.slack(a) / gd);
        }
    }
    t
}

/// A random strictly interior point: from a central point, a random
/// fraction of the way to the boundary along a random direction.
pub fn interior_point<R: Rng>(poly: &Polytope, rng: &mut R) -> JointAction {
    let base = match &poly.hint {
        Some(h) if poly.min_slack(h) > 0.0 => DVector::from_vec(h.clone()),
        _ => find_interior_point(poly).unwrap(),
    };
    let n = base.len();
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = ray_extent(poly, base.as_slice(), &d);
    let step = if t.is_finite() { rng.random_range(0.05..0.9) * t } else { 1.0 };
    DVector::from_fn(n, |j, _| base[j] + step * d[j])
}

fn step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let h = step(x[j]);
        let (mut p, mut m) = (x.clone(), x.clone());
        p[j] += h;
        m[j] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

/// Central differences of a vector map; column `j` is `∂F/∂x_j`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, rows: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let h = step(x[j]);
        let (mut p, mut m) = (x.clone(), x.clone());
        p[j] += h;
        m[j] -= h;
        out.set_column(j, &((f(&p) - f(&m)) / (2.0 * h)));
    }
    out
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Largest gain any agent gets from `trials` random feasible unilateral
/// deviations of norm at most `radius`.
pub fn best_unilateral_gain<G: PotentialGame + ?Sized, R: Rng>(
    game: &G,
    theta: &GameParams,
    a: &JointAction,
    poly: &Polytope,
    radius: f64,
    trials: usize,
    rng: &mut R,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..game.num_agents() {
        let range = game.agent_range(i);
        let base = game.utility(i, theta, a).unwrap();
        for _ in 0..trials {
            let mut d = vec![0.0; a.len()];
            let mut norm: f64 = 0.0;
            for j in range.clone() {
                d[j] = rng.random_range(-1.0..1.0);
                norm += d[j] * d[j];
            }
            let scale = radius * rng.random_range(0.0..1.0f64) / norm.sqrt();
            let t = ray_extent(poly, a.as_slice(), &d).min(scale);
            let b = DVector::from_fn(a.len(), |j, _| a[j] + t * d[j]);
            worst = worst.max(game.utility(i, theta, &b).unwrap() - base);
        }
    }
    worst
}
