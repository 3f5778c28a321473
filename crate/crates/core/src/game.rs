//! Trajectory games, the common-coupled stage decomposition and the
//! potential function.
//!
//! A game here is always a *restricted* game: the scenario has already
//! resolved any non-smooth term for one action subspace (lane assignment,
//! ordering, sign of a distance), so `potential_gradient`,
//! `potential_hessian` and `mixed_jacobian` are ordinary analytic
//! derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// Flat joint action, agent-major: agent `i` owns `i*d..(i+1)*d`.
pub type JointAction = DVector<f64>;
/// Flat game parameter vector; scenarios provide named views.
pub type GameParams = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    /// Every stage `0..=T` has weight one.
    Counting,
    /// Only the final stage `T` counts.
    DiracAtT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    num_steps: usize,
    dt: f64,
    measure: MeasureKind,
}

impl TimeGrid {
    pub fn new(num_steps: usize, dt: f64, measure: MeasureKind) -> Result<Self> {
        if num_steps < 3 {
            return Err(GameError::InvalidParams(format!(
                "time grid needs T >= 3, got {num_steps}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(GameError::InvalidParams(format!(
                "dt must be positive, got {dt}"
            )));
        }
        Ok(TimeGrid {
            num_steps,
            dt,
            measure,
        })
    }

    /// Final stage index `T`.
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Number of stages, `T + 1`.
    pub fn num_stages(&self) -> usize {
        self.num_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn measure(&self) -> MeasureKind {
        self.measure
    }

    pub fn weight(&self, t: usize) -> f64 {
        match self.measure {
            MeasureKind::Counting => 1.0,
            MeasureKind::DiracAtT => {
                if t == self.num_steps {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Stages with nonzero measure.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.num_steps).filter(move |&t| self.weight(t) != 0.0)
    }
}

/// Stage utilities split as common + own + others.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTerms {
    pub common: f64,
    pub own: Vec<f64>,
    pub others: Vec<f64>,
}

impl StageTerms {
    pub fn zeros(n: usize) -> Self {
        StageTerms {
            common: 0.0,
            own: vec![0.0; n],
            others: vec![0.0; n],
        }
    }

    pub fn utility(&self, i: usize) -> f64 {
        self.common + self.own[i] + self.others[i]
    }

    pub fn potential(&self) -> f64 {
        self.common + self.own.iter().sum::<f64>()
    }
}

/// A common-coupled trajectory game restricted to one action subspace.
pub trait PotentialGame: Sync {
    fn num_agents(&self) -> usize;

    /// Action dimension per agent.
    fn agent_dim(&self) -> usize;

    fn num_params(&self) -> usize;

    fn time_grid(&self) -> &TimeGrid;

    /// Stage utilities at stage `t` along `y = r(a)`.
    fn stage_terms(&self, theta: &GameParams, a: &JointAction, t: usize) -> Result<StageTerms>;

    fn potential_gradient(&self, theta: &GameParams, a: &JointAction) -> Result<DVector<f64>>;

    fn potential_hessian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>>;

    /// `J_θ ∇_a φ`, shape `(n·d) × p`.
    fn mixed_jacobian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>>;

    fn action_dim(&self) -> usize {
        self.num_agents() * self.agent_dim()
    }

    fn agent_range(&self, i: usize) -> std::ops::Range<usize> {
        let d = self.agent_dim();
        i * d..(i + 1) * d
    }

    /// Measure-weighted sum of agent `i`'s stage utilities.
    fn utility(&self, i: usize, theta: &GameParams, a: &JointAction) -> Result<f64> {
        self.check_dims(theta, a)?;
        let grid = *self.time_grid();
        let mut total = 0.0;
        for t in grid.support() {
            let terms = self.stage_terms(theta, a, t)?;
            total += grid.weight(t) * terms.utility(i);
        }
        finite(total, "utility")
    }

    /// Measure-weighted sum of the common term plus every own term.
    fn potential(&self, theta: &GameParams, a: &JointAction) -> Result<f64> {
        self.check_dims(theta, a)?;
        let grid = *self.time_grid();
        let mut total = 0.0;
        for t in grid.support() {
            let terms = self.stage_terms(theta, a, t)?;
            total += grid.weight(t) * terms.potential();
        }
        finite(total, "potential")
    }

    fn check_dims(&self, theta: &GameParams, a: &JointAction) -> Result<()> {
        if a.len() != self.action_dim() {
            return Err(GameError::Dimension {
                expected: self.action_dim(),
                got: a.len(),
            });
        }
        if theta.len() != self.num_params() {
            return Err(GameError::Dimension {
                expected: self.num_params(),
                got: theta.len(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(GameError::InvalidAction("non-finite action entry".into()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(GameError::InvalidParams("non-finite parameter".into()));
        }
        Ok(())
    }
}

pub(crate) fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(GameError::NonFiniteUtility(format!(
            "{what} evaluated to {v}"
        )))
    }
}

/// `|Δu − Δφ|` for a unilateral move of agent `i` to `a_i_prime`.
pub fn check_potential_identity<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    a: &JointAction,
    i: usize,
    a_i_prime: &[f64],
) -> Result<f64> {
    let range = game.agent_range(i);
    if a_i_prime.len() != range.len() {
        return Err(GameError::Dimension {
            expected: range.len(),
            got: a_i_prime.len(),
        });
    }
    let mut moved = a.clone();
    moved
        .rows_mut(range.start, range.len())
        .copy_from_slice(a_i_prime);
    let du = game.utility(i, theta, &moved)? - game.utility(i, theta, a)?;
    let dphi = game.potential(theta, &moved)? - game.potential(theta, a)?;
    Ok((du - dphi).abs())
}

/// Separable quadratic toy game, mostly useful as a fixture.
///
/// Agent `i` (dimension `d`) has own term `−Σ_j w_ij (a_ij − θ_ij)²`, a
/// common term `−κ (Σ a)²` couples everyone and an others-only term
/// `−ρ Σ_{j≠i} ‖a_j‖²` appears in utilities but not in the potential.
/// Parameters are the targets `θ`, one per action coordinate.
#[derive(Debug, Clone)]
pub struct QuadraticGame {
    n: usize,
    d: usize,
    weights: Vec<f64>,
    coupling: f64,
    others: f64,
    grid: TimeGrid,
}

impl QuadraticGame {
    pub fn new(n: usize, d: usize, weights: Vec<f64>, coupling: f64, others: f64) -> Result<Self> {
        if weights.len() != n * d {
            return Err(GameError::Dimension {
                expected: n * d,
                got: weights.len(),
            });
        }
        Ok(QuadraticGame {
            n,
            d,
            weights,
            coupling,
            others,
            grid: TimeGrid::new(3, 1.0, MeasureKind::DiracAtT)?,
        })
    }

    /// `φ = −(a − θ)²` on one scalar action.
    pub fn scalar() -> Self {
        QuadraticGame::new(1, 1, vec![1.0], 0.0, 0.0).expect("valid shape")
    }
}

impl PotentialGame for QuadraticGame {
    fn num_agents(&self) -> usize {
        self.n
    }

    fn agent_dim(&self) -> usize {
        self.d
    }

    fn num_params(&self) -> usize {
        self.n * self.d
    }

    fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn stage_terms(&self, theta: &GameParams, a: &JointAction, _t: usize) -> Result<StageTerms> {
        let mut terms = StageTerms::zeros(self.n);
        let sum: f64 = a.iter().sum();
        terms.common = -self.coupling * sum * sum;
        let sq: Vec<f64> = (0..self.n)
            .map(|i| (0..self.d).map(|j| a[i * self.d + j].powi(2)).sum())
            .collect();
        let total_sq: f64 = sq.iter().sum();
        for i in 0..self.n {
            terms.own[i] = -(0..self.d)
                .map(|j| {
                    let k = i * self.d + j;
                    self.weights[k] * (a[k] - theta[k]).powi(2)
                })
                .sum::<f64>();
            terms.others[i] = -self.others * (total_sq - sq[i]);
        }
        Ok(terms)
    }

    fn potential_gradient(&self, theta: &GameParams, a: &JointAction) -> Result<DVector<f64>> {
        self.check_dims(theta, a)?;
        let sum: f64 = a.iter().sum();
        Ok(DVector::from_fn(a.len(), |k, _| {
            -2.0 * self.weights[k] * (a[k] - theta[k]) - 2.0 * self.coupling * sum
        }))
    }

    fn potential_hessian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>> {
        self.check_dims(theta, a)?;
        let m = a.len();
        Ok(DMatrix::from_fn(m, m, |r, c| {
            let diag = if r == c { -2.0 * self.weights[r] } else { 0.0 };
            diag - 2.0 * self.coupling
        }))
    }

    fn mixed_jacobian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>> {
        self.check_dims(theta, a)?;
        let m = a.len();
        Ok(DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                2.0 * self.weights[r]
            } else {
                0.0
            }
        }))
    }
}
