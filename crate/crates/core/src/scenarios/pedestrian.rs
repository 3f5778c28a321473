//! Two pedestrians walking at constant speed along orthogonal paths that
//! cross at the origin: `y¹_t = (0, t a¹ + z¹)`, `y²_t = (t a² + z², 0)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{
    finite, GameParams, JointAction, MeasureKind, PotentialGame, StageTerms, TimeGrid,
};
use crate::implicit::SubspaceFamily;
use crate::solver::{ConstraintKind, LinearConstraint, Polytope, PolytopeBuilder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PedestrianConfig {
    /// Start offsets along each path, both negative.
    pub z: [f64; 2],
    /// Final time `T`.
    pub final_time: f64,
    /// Speed cap `c`.
    pub cap: f64,
    /// Gap `ε` in the faster-agent split.
    pub faster_gap: f64,
    /// Gap on `|z² a¹ − z¹ a²|` in the who-arrives-first split.
    pub arrival_gap: f64,
    /// Weight of the distance term.
    pub dist_weight: f64,
}

impl Default for PedestrianConfig {
    fn default() -> Self {
        PedestrianConfig {
            z: [-6.0, -4.0],
            final_time: 10.0,
            cap: 3.0,
            faster_gap: 0.05,
            arrival_gap: 0.05,
            dist_weight: 1.0,
        }
    }
}

impl PedestrianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z[0] < 0.0 && self.z[1] < 0.0) {
            return Err(GameError::Config(
                "pedestrian start offsets must be negative".into(),
            ));
        }
        if !(self.final_time > 0.0
            && self.cap > 0.0
            && self.faster_gap > 0.0
            && self.arrival_gap > 0.0)
        {
            return Err(GameError::Config(
                "pedestrian T, c and gaps must be positive".into(),
            ));
        }
        if !(self.dist_weight >= 0.0) {
            return Err(GameError::Config(
                "distance weight must be nonnegative".into(),
            ));
        }
        for z in self.z {
            if -z / self.final_time >= self.cap {
                return Err(GameError::Config(
                    "speed cap below the minimum arrival speed".into(),
                ));
            }
        }
        Ok(())
    }

    /// Lower speed bound `−z_i / T`: anything slower never reaches the crossing.
    pub fn min_speed(&self, i: usize) -> f64 {
        -self.z[i] / self.final_time
    }

    /// `D = z² a¹ − z¹ a²`; positive exactly when agent 2 reaches the
    /// crossing first.
    pub fn arrival_determinant(&self, a: &[f64]) -> f64 {
        self.z[1] * a[0] - self.z[0] * a[1]
    }

    pub fn positions(&self, a: &[f64], t: f64) -> [[f64; 2]; 2] {
        [[0.0, t * a[0] + self.z[0]], [t * a[1] + self.z[1], 0.0]]
    }
}

/// Named view of the four pedestrian parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianParams {
    pub vel_weight: [f64; 2],
    pub desired_speed: [f64; 2],
}

impl PedestrianParams {
    pub const LEN: usize = 4;

    pub fn to_vector(&self) -> GameParams {
        DVector::from_vec(vec![
            self.vel_weight[0],
            self.desired_speed[0],
            self.vel_weight[1],
            self.desired_speed[1],
        ])
    }

    pub fn from_vector(theta: &GameParams) -> Result<Self> {
        if theta.len() != Self::LEN {
            return Err(GameError::Dimension {
                expected: Self::LEN,
                got: theta.len(),
            });
        }
        Ok(PedestrianParams {
            vel_weight: [theta[0], theta[2]],
            desired_speed: [theta[1], theta[3]],
        })
    }
}

/// The pedestrian potential with the arrival order fixed by `sign`
/// (`+1` when agent 2 arrives first).
#[derive(Debug, Clone)]
pub struct PedestrianGame {
    pub config: PedestrianConfig,
    pub sign: f64,
    grid: TimeGrid,
}

impl PedestrianGame {
    pub fn new(config: PedestrianConfig, sign: f64) -> Result<Self> {
        config.validate()?;
        let grid = TimeGrid::new(10, config.final_time / 10.0, MeasureKind::DiracAtT)?;
        Ok(PedestrianGame {
            config,
            sign: sign.signum(),
            grid,
        })
    }

    /// Order-resolved denominator `s·D`, rejected when not positive.
    fn denominator(&self, a: &JointAction) -> Result<f64> {
        let d = self.sign * self.config.arrival_determinant(a.as_slice());
        if d > 0.0 {
            Ok(d)
        } else {
            Err(GameError::NonFiniteUtility(format!(
                "arrival denominator {d} is not positive"
            )))
        }
    }

    /// `∂(s·D)/∂a`.
    fn denominator_gradient(&self) -> [f64; 2] {
        [self.sign * self.config.z[1], -self.sign * self.config.z[0]]
    }
}

impl PotentialGame for PedestrianGame {
    fn num_agents(&self) -> usize {
        2
    }
    fn agent_dim(&self) -> usize {
        1
    }
    fn num_params(&self) -> usize {
        PedestrianParams::LEN
    }
    fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn stage_terms(&self, theta: &GameParams, a: &JointAction, _t: usize) -> Result<StageTerms> {
        self.check_dims(theta, a)?;
        let p = PedestrianParams::from_vector(theta)?;
        let u = self.denominator(a)?;
        let mut terms = StageTerms::zeros(2);
        terms.common = finite(-self.config.dist_weight / u, "distance term")?;
        for i in 0..2 {
            terms.own[i] = -p.vel_weight[i] * (a[i] - p.desired_speed[i]).powi(2);
        }
        Ok(terms)
    }

    fn potential_gradient(&self, theta: &GameParams, a: &JointAction) -> Result<DVector<f64>> {
        self.check_dims(theta, a)?;
        let p = PedestrianParams::from_vector(theta)?;
        let u = self.denominator(a)?;
        let du = self.denominator_gradient();
        let w = self.config.dist_weight;
        Ok(DVector::from_fn(2, |i, _| {
            w * du[i] / (u * u) - 2.0 * p.vel_weight[i] * (a[i] - p.desired_speed[i])
        }))
    }

    fn potential_hessian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>> {
        self.check_dims(theta, a)?;
        let p = PedestrianParams::from_vector(theta)?;
        let u = self.denominator(a)?;
        let du = self.denominator_gradient();
        let w = self.config.dist_weight;
        Ok(DMatrix::from_fn(2, 2, |i, j| {
            let dist = -2.0 * w * du[i] * du[j] / (u * u * u);
            if i == j {
                dist - 2.0 * p.vel_weight[i]
            } else {
                dist
            }
        }))
    }

    fn mixed_jacobian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>> {
        self.check_dims(theta, a)?;
        let p = PedestrianParams::from_vector(theta)?;
        let mut m = DMatrix::zeros(2, 4);
        for i in 0..2 {
            m[(i, 2 * i)] = -2.0 * (a[i] - p.desired_speed[i]);
            m[(i, 2 * i + 1)] = 2.0 * p.vel_weight[i];
        }
        Ok(m)
    }
}

/// One pedestrian subspace: who is faster and who reaches the crossing first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianSubspace {
    pub polytope: Polytope,
    /// Index of the faster agent.
    pub faster: usize,
    /// Sign of `D` on the subspace.
    pub sign: f64,
}

fn vertices_2d(constraints: &[LinearConstraint]) -> Vec<[f64; 2]> {
    let row = |c: &LinearConstraint| {
        let mut r = [0.0; 2];
        for &(j, v) in &c.terms {
            r[j] += v;
        }
        r
    };
    let mut out = Vec::new();
    for (p, cp) in constraints.iter().enumerate() {
        for cq in &constraints[p + 1..] {
            let (r, s) = (row(cp), row(cq));
            let det = r[0] * s[1] - r[1] * s[0];
            if det.abs() < 1e-12 {
                continue;
            }
            let x = [
                (cp.bound * s[1] - r[1] * cq.bound) / det,
                (r[0] * cq.bound - cp.bound * s[0]) / det,
            ];
            if constraints.iter().all(|c| c.slack(&x) >= -1e-9) {
                out.push(x);
            }
        }
    }
    out
}

/// Faster-agent subspaces, each split by arrival order when both orders
/// are possible on it. Two or three polytopes.
pub fn enumerate_pedestrian_subspaces(
    config: &PedestrianConfig,
) -> Result<Vec<PedestrianSubspace>> {
    config.validate()?;
    let mut out = Vec::new();
    for faster in 0..2 {
        let slower = 1 - faster;
        let base = Polytope::builder(2)
            .bounds(0, config.min_speed(0), config.cap)
            .bounds(1, config.min_speed(1), config.cap)
            .ge(
                vec![(faster, 1.0), (slower, -1.0)],
                config.faster_gap,
                ConstraintKind::Faster,
            );
        let base_poly = base.clone().build(0, "")?;
        let verts = vertices_2d(base_poly.constraints());
        if verts.is_empty() {
            continue;
        }
        for sign in [1.0, -1.0] {
            let sd: Vec<f64> = verts
                .iter()
                .map(|v| sign * config.arrival_determinant(v))
                .collect();
            let max = sd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = sd.iter().cloned().fold(f64::INFINITY, f64::min);
            if max <= config.arrival_gap {
                continue;
            }
            let mut b: PolytopeBuilder = base.clone();
            if min < config.arrival_gap {
                // s·(z² a¹ − z¹ a²) ≥ gap
                b = b.ge(
                    vec![(0, sign * config.z[1]), (1, -sign * config.z[0])],
                    config.arrival_gap,
                    ConstraintKind::Arrival,
                );
            }
            let first = if sign > 0.0 { 2 } else { 1 };
            let label = out.len();
            let desc = format!("agent {} faster, agent {first} first", faster + 1);
            out.push(PedestrianSubspace {
                polytope: b.build(label, desc)?,
                faster,
                sign,
            });
        }
    }
    Ok(out)
}

/// Closed-form `θ^v` that makes `a` stationary, given positive `θ^vel`.
pub fn invert_pedestrian_preferences(
    a: &JointAction,
    vel_weight: [f64; 2],
    config: &PedestrianConfig,
    subspace: &PedestrianSubspace,
) -> Result<[f64; 2]> {
    if a.len() != 2 {
        return Err(GameError::Dimension {
            expected: 2,
            got: a.len(),
        });
    }
    if !(vel_weight[0] > 0.0 && vel_weight[1] > 0.0) {
        return Err(GameError::InvalidParams(
            "velocity weights must be positive".into(),
        ));
    }
    if subspace.polytope.min_slack(a.as_slice()) <= 1e-9 {
        return Err(GameError::NotIdentifiableHere);
    }
    let game = PedestrianGame::new(config.clone(), subspace.sign)?;
    let u = game.denominator(a)?;
    let du = game.denominator_gradient();
    let mut out = [0.0; 2];
    for i in 0..2 {
        let dist_grad = config.dist_weight * du[i] / (u * u);
        out[i] = a[i] - dist_grad / (2.0 * vel_weight[i]);
    }
    Ok(out)
}

/// The pedestrian scene as a subspace family.
#[derive(Debug, Clone)]
pub struct PedestrianScenario {
    pub config: PedestrianConfig,
    pub subspaces: Vec<PedestrianSubspace>,
    games: Vec<PedestrianGame>,
}

impl PedestrianScenario {
    pub fn new(config: PedestrianConfig) -> Result<Self> {
        let subspaces = enumerate_pedestrian_subspaces(&config)?;
        let games = subspaces
            .iter()
            .map(|s| PedestrianGame::new(config.clone(), s.sign))
            .collect::<Result<Vec<_>>>()?;
        Ok(PedestrianScenario {
            config,
            subspaces,
            games,
        })
    }

    pub fn game_on(&self, k: usize) -> &PedestrianGame {
        &self.games[k]
    }

    pub fn polytopes(&self) -> Vec<Polytope> {
        self.subspaces.iter().map(|s| s.polytope.clone()).collect()
    }
}

impl SubspaceFamily for PedestrianScenario {
    fn len(&self) -> usize {
        self.subspaces.len()
    }
    fn polytope(&self, k: usize) -> &Polytope {
        &self.subspaces[k].polytope
    }
    fn game(&self, k: usize) -> Box<dyn PotentialGame + '_> {
        Box::new(&self.games[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_starts_give_two_subspaces() {
        let cfg = PedestrianConfig {
            z: [-5.0, -5.0],
            ..Default::default()
        };
        let subs = enumerate_pedestrian_subspaces(&cfg).unwrap();
        assert_eq!(subs.len(), 2);
        assert!(subs.iter().all(|s| s
            .polytope
            .constraints()
            .iter()
            .all(|c| c.kind != ConstraintKind::Arrival)));
    }

    #[test]
    fn asymmetric_starts_give_three_subspaces() {
        let subs = enumerate_pedestrian_subspaces(&PedestrianConfig::default()).unwrap();
        assert_eq!(subs.len(), 3);
        // Agent 2 starts closer, so only "agent 1 faster" splits by arrival.
        assert_eq!(subs.iter().filter(|s| s.faster == 0).count(), 2);
    }

    #[test]
    fn vertex_of_velocity_terms_is_zero() {
        let cfg = PedestrianConfig {
            dist_weight: 0.0,
            ..Default::default()
        };
        let g = PedestrianGame::new(cfg, 1.0).unwrap();
        let th = PedestrianParams {
            vel_weight: [1.0, 2.0],
            desired_speed: [1.5, 1.2],
        }
        .to_vector();
        let a = DVector::from_vec(vec![1.5, 1.2]);
        assert_eq!(g.potential(&th, &a).unwrap(), 0.0);
        assert_eq!(g.utility(0, &th, &a).unwrap(), 0.0);
    }

    #[test]
    fn wrong_order_is_rejected() {
        let g = PedestrianGame::new(PedestrianConfig::default(), -1.0).unwrap();
        let th = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        // D = −4·1 + 6·1 = 2 > 0, inconsistent with sign −1
        let a = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            g.potential(&th, &a),
            Err(GameError::NonFiniteUtility(_))
        ));
    }
}
