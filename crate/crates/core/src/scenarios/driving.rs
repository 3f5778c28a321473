//! Highway on-ramp merge with order-resolved distance coupling.
//!
//! Agent `i`'s action block is `[x_0..x_T, y_0..y_T]`; stage `t` is the
//! position `dt·(t+1)` seconds after the last observed one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{
    finite, GameParams, JointAction, MeasureKind, PotentialGame, StageTerms, TimeGrid,
};
use crate::implicit::SubspaceFamily;
use crate::solver::{ConstraintKind, Polytope};

use super::geometry::RoadGeometry;

/// Agent index of the car already on the highway.
pub const HIGHWAY_CAR: usize = 0;
/// Agent index of the car on the on-ramp.
pub const MERGER: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivingConfig {
    /// Additive constant `ζ` in the distance denominator.
    pub zeta: f64,
    /// Sharpness of the softplus replacing `max(0, x − e)`.
    pub softplus_beta: f64,
    /// Weight of the `−ε‖a‖²` strictness ridge; zero disables it.
    pub ridge: f64,
    /// Minimum longitudinal gap between ordered cars after the merge.
    pub order_gap: f64,
    pub dt: f64,
    /// Final stage index `T`.
    pub horizon_steps: usize,
}

impl Default for DrivingConfig {
    fn default() -> Self {
        DrivingConfig {
            zeta: 1.0,
            softplus_beta: 20.0,
            ridge: 1e-6,
            order_gap: 0.5,
            dt: 0.2,
            horizon_steps: 34,
        }
    }
}

impl DrivingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0
            && self.softplus_beta > 0.0
            && self.ridge >= 0.0
            && self.order_gap >= 0.0)
        {
            return Err(GameError::Config("driving constants out of range".into()));
        }
        TimeGrid::new(self.horizon_steps, self.dt, MeasureKind::Counting)?;
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon_steps, self.dt, MeasureKind::Counting)
    }

    pub fn layout(&self, agents: usize) -> DrivingLayout {
        DrivingLayout {
            agents,
            stages: self.horizon_steps + 1,
        }
    }
}

/// Index arithmetic for driving actions and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrivingLayout {
    pub agents: usize,
    /// `T + 1`.
    pub stages: usize,
}

impl DrivingLayout {
    pub fn agent_dim(&self) -> usize {
        2 * self.stages
    }
    pub fn action_dim(&self) -> usize {
        self.agents * self.agent_dim()
    }
    pub fn x(&self, i: usize, t: usize) -> usize {
        i * self.agent_dim() + t
    }
    pub fn y(&self, i: usize, t: usize) -> usize {
        i * self.agent_dim() + self.stages + t
    }

    fn param_block(&self) -> usize {
        2 * self.stages + 4
    }
    pub fn num_params(&self) -> usize {
        1 + self.agents * self.param_block()
    }
    pub fn dist(&self) -> usize {
        0
    }
    pub fn cen(&self, i: usize, t: usize) -> usize {
        1 + i * self.param_block() + t
    }
    pub fn vel(&self, i: usize, t: usize) -> usize {
        1 + i * self.param_block() + self.stages + t
    }
    pub fn desired_velocity(&self, i: usize) -> usize {
        1 + i * self.param_block() + 2 * self.stages
    }
    pub fn velw(&self, i: usize) -> usize {
        self.desired_velocity(i) + 1
    }
    pub fn acc(&self, i: usize) -> usize {
        self.desired_velocity(i) + 2
    }
    pub fn end(&self, i: usize) -> usize {
        self.desired_velocity(i) + 3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDrivingParams {
    pub cen: Vec<f64>,
    pub vel: Vec<f64>,
    pub desired_velocity: f64,
    pub velw: f64,
    pub acc: f64,
    pub end: f64,
}

/// Named view of the driving parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingParams {
    pub dist: f64,
    pub agents: Vec<AgentDrivingParams>,
}

impl DrivingParams {
    pub fn from_vector(theta: &GameParams, layout: &DrivingLayout) -> Result<Self> {
        if theta.len() != layout.num_params() {
            return Err(GameError::Dimension {
                expected: layout.num_params(),
                got: theta.len(),
            });
        }
        let s = layout.stages;
        let agents = (0..layout.agents)
            .map(|i| AgentDrivingParams {
                cen: (0..s).map(|t| theta[layout.cen(i, t)]).collect(),
                vel: (0..s).map(|t| theta[layout.vel(i, t)]).collect(),
                desired_velocity: theta[layout.desired_velocity(i)],
                velw: theta[layout.velw(i)],
                acc: theta[layout.acc(i)],
                end: theta[layout.end(i)],
            })
            .collect();
        Ok(DrivingParams {
            dist: theta[layout.dist()],
            agents,
        })
    }

    pub fn to_vector(&self, layout: &DrivingLayout) -> Result<GameParams> {
        if self.agents.len() != layout.agents
            || self
                .agents
                .iter()
                .any(|p| p.cen.len() != layout.stages || p.vel.len() != layout.stages)
        {
            return Err(GameError::Shape(
                "driving parameters do not match the layout".into(),
            ));
        }
        let mut th = DVector::zeros(layout.num_params());
        th[layout.dist()] = self.dist;
        for (i, p) in self.agents.iter().enumerate() {
            for t in 0..layout.stages {
                th[layout.cen(i, t)] = p.cen[t];
                th[layout.vel(i, t)] = p.vel[t];
            }
            th[layout.desired_velocity(i)] = p.desired_velocity;
            th[layout.velw(i)] = p.velw;
            th[layout.acc(i)] = p.acc;
            th[layout.end(i)] = p.end;
        }
        Ok(th)
    }

    /// Every weight nonnegative, and the lateral and acceleration weights
    /// strictly positive.
    pub fn check_signs(&self) -> Result<()> {
        let bad = |v: f64| !(v >= 0.0);
        if bad(self.dist) {
            return Err(GameError::InvalidParams("negative distance weight".into()));
        }
        for (i, p) in self.agents.iter().enumerate() {
            if p.cen.iter().chain(&p.vel).any(|&v| bad(v)) || bad(p.end) {
                return Err(GameError::InvalidParams(format!(
                    "agent {i}: negative weight"
                )));
            }
            if !(p.velw > 0.0 && p.acc > 0.0) {
                return Err(GameError::InvalidParams(format!(
                    "agent {i}: lateral/acceleration weight must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Observed positions per agent, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastTrajectory {
    pub agents: Vec<Vec<[f64; 2]>>,
}

/// Positions at stages −1 and −2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub prev: [f64; 2],
    pub prev2: [f64; 2],
}

impl PastTrajectory {
    /// The last two positions; a single observation is treated as standing
    /// still.
    pub fn anchor(&self, i: usize) -> Result<Anchor> {
        let h = self
            .agents
            .get(i)
            .ok_or_else(|| GameError::Data(format!("no past for agent {i}")))?;
        match h.len() {
            0 => Err(GameError::Data(format!("empty past for agent {i}"))),
            1 => Ok(Anchor {
                prev: h[0],
                prev2: h[0],
            }),
            n => Ok(Anchor {
                prev: h[n - 1],
                prev2: h[n - 2],
            }),
        }
    }

    /// Last finite-difference velocity.
    pub fn last_velocity(&self, i: usize, dt: f64) -> Result<[f64; 2]> {
        let a = self.anchor(i)?;
        Ok([(a.prev[0] - a.prev2[0]) / dt, (a.prev[1] - a.prev2[1]) / dt])
    }
}

/// Positions over stages plus the two anchoring past positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub dt: f64,
    pub anchors: Vec<Anchor>,
    /// `positions[i][t]`.
    pub positions: Vec<Vec<[f64; 2]>>,
}

impl JointTrajectory {
    fn pos(&self, i: usize, t: isize) -> [f64; 2] {
        match t {
            -1 => self.anchors[i].prev,
            -2 => self.anchors[i].prev2,
            t => self.positions[i][t as usize],
        }
    }

    /// `(pos_t, pos_{t−1}, pos_{t−2})`.
    pub fn augmented(&self, i: usize, t: usize) -> [[f64; 2]; 3] {
        let t = t as isize;
        [self.pos(i, t), self.pos(i, t - 1), self.pos(i, t - 2)]
    }

    /// `(δposx, δposy)` at stage `t`.
    pub fn velocity(&self, i: usize, t: usize) -> [f64; 2] {
        let [p0, p1, _] = self.augmented(i, t);
        [(p0[0] - p1[0]) / self.dt, (p0[1] - p1[1]) / self.dt]
    }

    /// `δ²posx` at stage `t`.
    pub fn acceleration(&self, i: usize, t: usize) -> f64 {
        let [p0, p1, p2] = self.augmented(i, t);
        (p0[0] - 2.0 * p1[0] + p2[0]) / (self.dt * self.dt)
    }

    pub fn to_action(&self) -> JointAction {
        action_from_positions(&self.positions)
    }
}

/// Flattens `positions[i][t]` into the agent-major action layout.
pub fn action_from_positions(positions: &[Vec<[f64; 2]>]) -> JointAction {
    let mut v = Vec::new();
    for p in positions {
        v.extend(p.iter().map(|q| q[0]));
        v.extend(p.iter().map(|q| q[1]));
    }
    DVector::from_vec(v)
}

/// Maps an action to its trajectory, rejecting backward moves.
pub fn driving_parametrize(
    a: &JointAction,
    past: &PastTrajectory,
    layout: &DrivingLayout,
    dt: f64,
) -> Result<JointTrajectory> {
    if a.len() != layout.action_dim() {
        return Err(GameError::Dimension {
            expected: layout.action_dim(),
            got: a.len(),
        });
    }
    let mut anchors = Vec::with_capacity(layout.agents);
    let mut positions = Vec::with_capacity(layout.agents);
    for i in 0..layout.agents {
        let anchor = past.anchor(i)?;
        let mut prev_x = anchor.prev[0];
        let mut p = Vec::with_capacity(layout.stages);
        for t in 0..layout.stages {
            let q = [a[layout.x(i, t)], a[layout.y(i, t)]];
            if q[0] < prev_x - 1e-9 {
                return Err(GameError::InvalidAction(format!(
                    "agent {i} moves backward at stage {t}: {} < {prev_x}",
                    q[0]
                )));
            }
            prev_x = q[0];
            p.push(q);
        }
        anchors.push(anchor);
        positions.push(p);
    }
    Ok(JointTrajectory {
        dt,
        anchors,
        positions,
    })
}

fn softplus(z: f64, beta: f64) -> f64 {
    z.max(0.0) + (-(beta * z).abs()).exp().ln_1p() / beta
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative buffers filled term by term.
struct Derivs {
    grad: DVector<f64>,
    hess: Option<DMatrix<f64>>,
    mixed: Option<DMatrix<f64>>,
}

impl Derivs {
    /// Adds `−μ w r²` with `r = Σ c_k a_k + const`, where `w = θ[w_col]`
    /// (if any) and `∂r/∂θ[shift.0] = shift.1`.
    #[allow(clippy::too_many_arguments)]
    fn quad(
        &mut self,
        mu: f64,
        w: f64,
        r: f64,
        coeffs: &[(usize, f64)],
        w_col: Option<usize>,
        shift: Option<(usize, f64)>,
    ) {
        let mw = mu * w;
        for &(k, ck) in coeffs {
            self.grad[k] -= 2.0 * mw * r * ck;
            if let Some(h) = self.hess.as_mut() {
                for &(l, cl) in coeffs {
                    h[(k, l)] -= 2.0 * mw * ck * cl;
                }
            }
            if let Some(m) = self.mixed.as_mut() {
                if let Some(col) = w_col {
                    m[(k, col)] -= 2.0 * mu * r * ck;
                }
                if let Some((col, s)) = shift {
                    m[(k, col)] -= 2.0 * mw * ck * s;
                }
            }
        }
    }
}

/// The merge game restricted to one lane-and-order assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingGame {
    config: DrivingConfig,
    grid: TimeGrid,
    layout: DrivingLayout,
    anchors: Vec<Anchor>,
    /// Lane center per agent and stage.
    centers: Vec<Vec<f64>>,
    /// Lane end per agent and stage.
    ends: Vec<Vec<Option<f64>>>,
    /// `(ahead, behind)` pairs sharing a lane, per stage.
    pairs: Vec<Vec<(usize, usize)>>,
}

impl DrivingGame {
    pub fn new(
        config: &DrivingConfig,
        geometry: &RoadGeometry,
        past: &PastTrajectory,
        lane_plan: &[Vec<usize>],
        pairs: Vec<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        config.validate()?;
        let grid = config.time_grid()?;
        let layout = config.layout(lane_plan.len());
        let s = layout.stages;
        if lane_plan.iter().any(|p| p.len() != s) || pairs.len() != s {
            return Err(GameError::Shape("lane plan must cover every stage".into()));
        }
        let anchors = (0..layout.agents)
            .map(|i| past.anchor(i))
            .collect::<Result<Vec<_>>>()?;
        let lane = |k: usize| {
            geometry
                .lanes
                .get(k)
                .ok_or_else(|| GameError::Config(format!("unknown lane {k}")))
        };
        let mut centers = Vec::new();
        let mut ends = Vec::new();
        for plan in lane_plan {
            centers.push(
                plan.iter()
                    .map(|&k| lane(k).map(|l| l.center_y))
                    .collect::<Result<Vec<_>>>()?,
            );
            ends.push(
                plan.iter()
                    .map(|&k| lane(k).map(|l| l.ends_at))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(DrivingGame {
            config: config.clone(),
            grid,
            layout,
            anchors,
            centers,
            ends,
            pairs,
        })
    }

    pub fn layout(&self) -> &DrivingLayout {
        &self.layout
    }

    pub fn config(&self) -> &DrivingConfig {
        &self.config
    }

    pub fn lane_center(&self, i: usize, t: usize) -> f64 {
        self.centers[i][t]
    }

    pub fn lane_end(&self, i: usize, t: usize) -> Option<f64> {
        self.ends[i][t]
    }

    pub fn pairs(&self, t: usize) -> &[(usize, usize)] {
        &self.pairs[t]
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// x-coordinate at stage `t` (negative stages from the past) and its
    /// action index, if it is a decision variable.
    fn x_at(&self, a: &JointAction, i: usize, t: isize) -> (f64, Option<usize>) {
        match t {
            -1 => (self.anchors[i].prev[0], None),
            -2 => (self.anchors[i].prev2[0], None),
            t => {
                let k = self.layout.x(i, t as usize);
                (a[k], Some(k))
            }
        }
    }

    fn y_at(&self, a: &JointAction, i: usize, t: isize) -> (f64, Option<usize>) {
        match t {
            -1 => (self.anchors[i].prev[1], None),
            -2 => (self.anchors[i].prev2[1], None),
            t => {
                let k = self.layout.y(i, t as usize);
                (a[k], Some(k))
            }
        }
    }

    fn gap(&self, a: &JointAction, ahead: usize, behind: usize, t: usize) -> Result<f64> {
        let q = a[self.layout.x(ahead, t)] - a[self.layout.x(behind, t)] + self.config.zeta;
        if q > 0.0 {
            Ok(q)
        } else {
            Err(GameError::NonFiniteUtility(format!(
                "distance denominator {q} not positive at stage {t}"
            )))
        }
    }

    fn derivatives(
        &self,
        theta: &GameParams,
        a: &JointAction,
        hess: bool,
        mixed: bool,
    ) -> Result<Derivs> {
        self.check_dims(theta, a)?;
        let n = self.layout.action_dim();
        let l = &self.layout;
        let dt = self.config.dt;
        let beta = self.config.softplus_beta;
        let mut d = Derivs {
            grad: DVector::zeros(n),
            hess: hess.then(|| DMatrix::zeros(n, n)),
            mixed: mixed.then(|| DMatrix::zeros(n, l.num_params())),
        };
        let lin = |terms: &[((f64, Option<usize>), f64)]| {
            let r: f64 = terms.iter().map(|((v, _), c)| v * c).sum();
            let coeffs: Vec<(usize, f64)> = terms
                .iter()
                .filter_map(|((_, k), c)| k.map(|k| (k, *c)))
                .collect();
            (r, coeffs)
        };
        for t in self.grid.support() {
            let mu = self.grid.weight(t);
            let ti = t as isize;
            for i in 0..l.agents {
                let (yv, yk) = self.y_at(a, i, ti);
                d.quad(
                    mu,
                    theta[l.cen(i, t)],
                    yv - self.centers[i][t],
                    &[(yk.unwrap(), 1.0)],
                    Some(l.cen(i, t)),
                    None,
                );

                let (r, c) = lin(&[
                    (self.x_at(a, i, ti), 1.0 / dt),
                    (self.x_at(a, i, ti - 1), -1.0 / dt),
                ]);
                let v = theta[l.desired_velocity(i)];
                d.quad(
                    mu,
                    theta[l.vel(i, t)],
                    r - v,
                    &c,
                    Some(l.vel(i, t)),
                    Some((l.desired_velocity(i), -1.0)),
                );

                let (r, c) = lin(&[
                    (self.y_at(a, i, ti), 1.0 / dt),
                    (self.y_at(a, i, ti - 1), -1.0 / dt),
                ]);
                d.quad(mu, theta[l.velw(i)], r, &c, Some(l.velw(i)), None);

                let dt2 = dt * dt;
                let (r, c) = lin(&[
                    (self.x_at(a, i, ti), 1.0 / dt2),
                    (self.x_at(a, i, ti - 1), -2.0 / dt2),
                    (self.x_at(a, i, ti - 2), 1.0 / dt2),
                ]);
                d.quad(mu, theta[l.acc(i)], r, &c, Some(l.acc(i)), None);

                if self.config.ridge > 0.0 {
                    let (xv, xk) = self.x_at(a, i, ti);
                    d.quad(mu, self.config.ridge, xv, &[(xk.unwrap(), 1.0)], None, None);
                    d.quad(mu, self.config.ridge, yv, &[(yk.unwrap(), 1.0)], None, None);
                }

                if let Some(e) = self.ends[i][t] {
                    let k = l.x(i, t);
                    let s = logistic(beta * (a[k] - e));
                    let w = mu * theta[l.end(i)];
                    d.grad[k] -= w * s;
                    if let Some(h) = d.hess.as_mut() {
                        h[(k, k)] -= w * beta * s * (1.0 - s);
                    }
                    if let Some(m) = d.mixed.as_mut() {
                        m[(k, l.end(i))] -= mu * s;
                    }
                }
            }
            let wd = mu * theta[l.dist()];
            for &(ahead, behind) in &self.pairs[t] {
                let q = self.gap(a, ahead, behind, t)?;
                let (ka, kb) = (l.x(ahead, t), l.x(behind, t));
                d.grad[ka] += wd / (q * q);
                d.grad[kb] -= wd / (q * q);
                if let Some(h) = d.hess.as_mut() {
                    let c = 2.0 * wd / (q * q * q);
                    h[(ka, ka)] -= c;
                    h[(kb, kb)] -= c;
                    h[(ka, kb)] += c;
                    h[(kb, ka)] += c;
                }
                if let Some(m) = d.mixed.as_mut() {
                    m[(ka, l.dist())] += mu / (q * q);
                    m[(kb, l.dist())] -= mu / (q * q);
                }
            }
        }
        Ok(d)
    }
}

impl PotentialGame for DrivingGame {
    fn num_agents(&self) -> usize {
        self.layout.agents
    }
    fn agent_dim(&self) -> usize {
        self.layout.agent_dim()
    }
    fn num_params(&self) -> usize {
        self.layout.num_params()
    }
    fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn stage_terms(&self, theta: &GameParams, a: &JointAction, t: usize) -> Result<StageTerms> {
        self.check_dims(theta, a)?;
        let l = &self.layout;
        let dt = self.config.dt;
        let ti = t as isize;
        let mut terms = StageTerms::zeros(l.agents);
        for i in 0..l.agents {
            let x = |s| self.x_at(a, i, s).0;
            let y = |s| self.y_at(a, i, s).0;
            let vx = (x(ti) - x(ti - 1)) / dt;
            let vy = (y(ti) - y(ti - 1)) / dt;
            let ax = (x(ti) - 2.0 * x(ti - 1) + x(ti - 2)) / (dt * dt);
            let mut own = -theta[l.cen(i, t)] * (y(ti) - self.centers[i][t]).powi(2)
                - theta[l.vel(i, t)] * (vx - theta[l.desired_velocity(i)]).powi(2)
                - theta[l.velw(i)] * vy * vy
                - theta[l.acc(i)] * ax * ax;
            if let Some(e) = self.ends[i][t] {
                own -= theta[l.end(i)] * softplus(x(ti) - e, self.config.softplus_beta);
            }
            own -= self.config.ridge * (x(ti).powi(2) + y(ti).powi(2));
            terms.own[i] = own;
        }
        for &(ahead, behind) in &self.pairs[t] {
            terms.common -= theta[l.dist()] / self.gap(a, ahead, behind, t)?;
        }
        finite(
            terms.common + terms.own.iter().sum::<f64>(),
            "stage utility",
        )?;
        Ok(terms)
    }

    fn potential_gradient(&self, theta: &GameParams, a: &JointAction) -> Result<DVector<f64>> {
        Ok(self.derivatives(theta, a, false, false)?.grad)
    }

    fn potential_hessian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>> {
        Ok(self
            .derivatives(theta, a, true, false)?
            .hess
            .expect("requested"))
    }

    fn mixed_jacobian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>> {
        Ok(self
            .derivatives(theta, a, false, true)?
            .mixed
            .expect("requested"))
    }
}

/// One merge subspace: the merger enters the highway band at
/// `merge_step`, and one of the cars leads from then on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingSubspace {
    pub polytope: Polytope,
    pub merge_step: usize,
    pub merger_first: bool,
}

/// Subspace index of `(merge_step, merger_first)`.
pub fn merge_subspace_index(merge_step: usize, merger_first: bool) -> usize {
    (merge_step - 1) * 2 + merger_first as usize
}

/// Lane plan and ordered pairs of a merge subspace.
pub fn merge_lane_plan(
    geometry: &RoadGeometry,
    stages: usize,
    merge_step: usize,
    merger_first: bool,
) -> (Vec<Vec<usize>>, Vec<Vec<(usize, usize)>>) {
    let highway = vec![geometry.highway_lane; stages];
    let merger = (0..stages)
        .map(|t| {
            if t < merge_step {
                geometry.ramp_lane
            } else {
                geometry.highway_lane
            }
        })
        .collect();
    let order = if merger_first {
        (MERGER, HIGHWAY_CAR)
    } else {
        (HIGHWAY_CAR, MERGER)
    };
    let pairs = (0..stages)
        .map(|t| if t >= merge_step { vec![order] } else { vec![] })
        .collect();
    (vec![highway, merger], pairs)
}

fn merge_hint(
    geometry: &RoadGeometry,
    past: &PastTrajectory,
    config: &DrivingConfig,
    merge_step: usize,
    merger_first: bool,
) -> Result<Vec<f64>> {
    let layout = config.layout(2);
    let dt = config.dt;
    let s = layout.stages;
    let mut xs = [vec![0.0; s], vec![0.0; s]];
    for (i, x) in xs.iter_mut().enumerate() {
        let start = past.anchor(i)?.prev[0];
        let v = past.last_velocity(i, dt)?[0].max(0.5);
        for (t, xt) in x.iter_mut().enumerate() {
            *xt = start + v * dt * (t + 1) as f64;
        }
    }
    let (first, second) = if merger_first {
        (MERGER, HIGHWAY_CAR)
    } else {
        (HIGHWAY_CAR, MERGER)
    };
    let mut prev = past.anchor(first)?.prev[0];
    for t in 0..s {
        let mut x = xs[first][t];
        if t >= merge_step {
            x = x.max(xs[second][t] + config.order_gap + 1.0);
        }
        x = x.max(prev + 0.05);
        xs[first][t] = x;
        prev = x;
    }
    let hw = geometry.highway().band();
    let ramp = geometry.ramp().band();
    let mut hint = vec![0.0; layout.action_dim()];
    for i in 0..2 {
        for t in 0..s {
            hint[layout.x(i, t)] = xs[i][t];
            let band = if i == MERGER && t < merge_step {
                ramp
            } else {
                hw
            };
            hint[layout.y(i, t)] = 0.5 * (band.0 + band.1);
        }
    }
    Ok(hint)
}

/// Merge steps `1..T−1` times both orders, `2(T−1)` subspaces in the
/// order given by [`merge_subspace_index`].
pub fn enumerate_driving_subspaces(
    geometry: &RoadGeometry,
    past: &PastTrajectory,
    config: &DrivingConfig,
) -> Result<Vec<DrivingSubspace>> {
    geometry.validate()?;
    config.validate()?;
    if past.agents.len() != 2 {
        return Err(GameError::Data(format!(
            "merge scene needs 2 agents, got {}",
            past.agents.len()
        )));
    }
    let layout = config.layout(2);
    let s = layout.stages;
    let t_final = config.horizon_steps;
    let (xlo, xhi) = geometry.x_range;
    let hw = geometry.highway().band();
    let ramp = geometry.ramp().band();
    let boundary_from_ramp = ramp.1.min(hw.1).max(ramp.0);
    let mut out = Vec::with_capacity(2 * (t_final - 1));
    for m in 1..t_final {
        for merger_first in [false, true] {
            let mut b = Polytope::builder(layout.action_dim());
            for i in 0..2 {
                let x_prev = past.anchor(i)?.prev[0];
                for t in 0..s {
                    b = b.bounds(layout.x(i, t), xlo, xhi);
                    if t == 0 {
                        b = b.ge(
                            vec![(layout.x(i, 0), 1.0)],
                            x_prev,
                            ConstraintKind::Monotone,
                        );
                    } else {
                        b = b.ge(
                            vec![(layout.x(i, t), 1.0), (layout.x(i, t - 1), -1.0)],
                            0.0,
                            ConstraintKind::Monotone,
                        );
                    }
                    let y = layout.y(i, t);
                    if i == HIGHWAY_CAR {
                        b = b.bounds(y, hw.0, hw.1);
                    } else if t < m {
                        b = b.ge(vec![(y, 1.0)], ramp.0, ConstraintKind::Bound);
                        b = b.le(vec![(y, 1.0)], boundary_from_ramp, ConstraintKind::LaneBand);
                    } else {
                        b = b.ge(vec![(y, 1.0)], hw.0, ConstraintKind::LaneBand);
                        b = b.le(vec![(y, 1.0)], hw.1, ConstraintKind::Bound);
                    }
                }
            }
            let (first, second) = if merger_first {
                (MERGER, HIGHWAY_CAR)
            } else {
                (HIGHWAY_CAR, MERGER)
            };
            for t in m..s {
                b = b.ge(
                    vec![(layout.x(first, t), 1.0), (layout.x(second, t), -1.0)],
                    config.order_gap,
                    ConstraintKind::Ordering,
                );
            }
            let label = merge_subspace_index(m, merger_first);
            let desc = format!(
                "merge@{m} {}",
                if merger_first {
                    "merger-first"
                } else {
                    "highway-first"
                }
            );
            let mut poly = b.build(label, desc)?;
            if let Ok(h) = merge_hint(geometry, past, config, m, merger_first) {
                if poly.min_slack(&h) > 0.0 {
                    poly = poly.with_hint(h);
                }
            }
            out.push(DrivingSubspace {
                polytope: poly,
                merge_step: m,
                merger_first,
            });
        }
    }
    Ok(out)
}

/// First stage at which the merger's y lies in the highway band.
pub fn merge_step_of(
    a: &JointAction,
    geometry: &RoadGeometry,
    layout: &DrivingLayout,
) -> Option<usize> {
    let (lo, hi) = geometry.highway().band();
    (0..layout.stages).find(|&t| {
        let y = a[layout.y(MERGER, t)];
        y >= lo && y <= hi
    })
}

/// A two-car merge scene as a subspace family.
#[derive(Debug, Clone)]
pub struct DrivingScenario {
    pub geometry: RoadGeometry,
    pub config: DrivingConfig,
    pub past: PastTrajectory,
    pub subspaces: Vec<DrivingSubspace>,
    games: Vec<DrivingGame>,
}

impl DrivingScenario {
    pub fn two_car_merge(
        geometry: RoadGeometry,
        past: PastTrajectory,
        config: DrivingConfig,
    ) -> Result<Self> {
        let subspaces = enumerate_driving_subspaces(&geometry, &past, &config)?;
        let stages = config.horizon_steps + 1;
        let games = subspaces
            .iter()
            .map(|s| {
                let (plan, pairs) =
                    merge_lane_plan(&geometry, stages, s.merge_step, s.merger_first);
                DrivingGame::new(&config, &geometry, &past, &plan, pairs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DrivingScenario {
            geometry,
            config,
            past,
            subspaces,
            games,
        })
    }

    pub fn layout(&self) -> DrivingLayout {
        self.config.layout(2)
    }

    pub fn game_on(&self, k: usize) -> &DrivingGame {
        &self.games[k]
    }

    pub fn polytopes(&self) -> Vec<Polytope> {
        self.subspaces.iter().map(|s| s.polytope.clone()).collect()
    }
}

impl SubspaceFamily for DrivingScenario {
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

    fn short_config() -> DrivingConfig {
        DrivingConfig {
            horizon_steps: 10,
            ..Default::default()
        }
    }

    fn past() -> PastTrajectory {
        PastTrajectory {
            agents: vec![
                vec![[98.0, 0.0], [100.0, 0.0]],
                vec![[96.0, -3.5], [98.0, -3.5]],
            ],
        }
    }

    #[test]
    fn ten_steps_give_eighteen_subspaces() {
        let subs = enumerate_driving_subspaces(&RoadGeometry::default(), &past(), &short_config())
            .unwrap();
        assert_eq!(subs.len(), 18);
        for (k, s) in subs.iter().enumerate() {
            assert_eq!(s.polytope.label, k);
            assert_eq!(merge_subspace_index(s.merge_step, s.merger_first), k);
            assert!(
                s.polytope.hint.is_some(),
                "subspace {k} lacks an interior hint"
            );
        }
    }

    #[test]
    fn parametrize_reports_velocity_and_rejects_backward_moves() {
        let cfg = short_config();
        let layout = cfg.layout(2);
        let mut pos = vec![vec![[0.0; 2]; layout.stages]; 2];
        for t in 0..layout.stages {
            pos[0][t] = [100.0 + 2.0 * (t + 1) as f64, 0.0];
            pos[1][t] = [98.0 + 2.0 * (t + 1) as f64, -3.5];
        }
        let a = action_from_positions(&pos);
        let traj = driving_parametrize(&a, &past(), &layout, cfg.dt).unwrap();
        for t in 0..layout.stages {
            assert!((traj.velocity(0, t)[0] - 10.0).abs() < 1e-9);
            assert!(traj.acceleration(0, t).abs() < 1e-6);
        }
        let mut back = a.clone();
        back[layout.x(0, 3)] = 0.0;
        assert!(matches!(
            driving_parametrize(&back, &past(), &layout, cfg.dt),
            Err(GameError::InvalidAction(_))
        ));
    }

    #[test]
    fn params_view_round_trips() {
        let layout = short_config().layout(2);
        let th = DVector::from_fn(layout.num_params(), |k, _| k as f64);
        let view = DrivingParams::from_vector(&th, &layout).unwrap();
        assert_eq!(view.to_vector(&layout).unwrap(), th);
        assert_eq!(view.agents[1].end, th[layout.num_params() - 1]);
    }
}
