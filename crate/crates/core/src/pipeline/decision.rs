//! Equilibria of a scene after overriding one agent's desired speed.

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::GameParams;
use crate::par::{self, ExecMode};
use crate::implicit::SubspaceFamily;
use crate::scenarios::{DrivingScenario, HIGHWAY_CAR, MERGER};
use crate::solver::{maximize_on_polytope, SolveOptions, SolveReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEquilibrium {
    pub subspace: usize,
    pub description: String,
    pub merge_step: usize,
    pub merger_first: bool,
    /// No subspace-splitting constraint is active, so the point is a local
    /// NE of the unrestricted game and not an artifact of the partition.
    pub genuine: bool,
    /// Merger ahead of the highway car at the final stage.
    pub merger_ahead_at_end: bool,
    /// Final-stage longitudinal speed of the ego agent.
    pub ego_terminal_speed: f64,
    pub trajectory: Vec<Vec<[f64; 2]>>,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionResult {
    /// Converged subspace maximizers, highest potential first.
    pub equilibria: Vec<DecisionEquilibrium>,
    pub failures: Vec<(usize, String)>,
}

impl DecisionResult {
    pub fn genuine(&self) -> impl Iterator<Item = &DecisionEquilibrium> {
        self.equilibria.iter().filter(|e| e.genuine)
    }
}

/// Solves every subspace with the ego's desired speed replaced by
/// `desired_speed` (`None` keeps `theta` as is).
pub fn decision_transfer(
    scenario: &DrivingScenario,
    theta: &GameParams,
    ego: usize,
    desired_speed: Option<f64>,
    solve: &SolveOptions,
    exec: ExecMode,
) -> Result<DecisionResult> {
    let l = scenario.layout();
    if ego >= l.agents {
        return Err(GameError::InvalidParams(format!("ego index {ego} out of range")));
    }
    if theta.len() != l.num_params() {
        return Err(GameError::Dimension { expected: l.num_params(), got: theta.len() });
    }
    let mut th = theta.clone();
    if let Some(v) = desired_speed {
        th[l.desired_velocity(ego)] = v;
    }
    let dt = scenario.config.dt;
    let outcomes = par::map_range(exec, scenario.len(), |k| {
        let poly = SubspaceFamily::polytope(scenario, k);
        maximize_on_polytope(scenario.game_on(k), &th, poly, solve).and_then(|r| {
            if r.converged() {
                Ok(r)
            } else {
                Err(GameError::MaxIter(r.iterations))
            }
        })
    });
    let mut equilibria = Vec::new();
    let mut failures = Vec::new();
    let t_end = l.stages - 1;
    for (k, out) in outcomes.into_iter().enumerate() {
        let report = match out {
            Ok(r) => r,
            Err(e) => {
                failures.push((k, e.to_string()));
                continue;
            }
        };
        let sub = &scenario.subspaces[k];
        let cons = sub.polytope.constraints();
        let genuine = !report.active_constraints.iter().any(|&m| cons[m].kind.splits_subspaces());
        let a = &report.argmax;
        let x_prev = if t_end == 0 { scenario.past.anchor(ego)?.prev[0] } else { a[l.x(ego, t_end - 1)] };
        let trajectory = (0..l.agents)
            .map(|i| (0..l.stages).map(|t| [a[l.x(i, t)], a[l.y(i, t)]]).collect())
            .collect();
        equilibria.push(DecisionEquilibrium {
            subspace: k,
            description: sub.polytope.description.clone(),
            merge_step: sub.merge_step,
            merger_first: sub.merger_first,
            genuine,
            merger_ahead_at_end: a[l.x(MERGER, t_end)] > a[l.x(HIGHWAY_CAR, t_end)],
            ego_terminal_speed: (a[l.x(ego, t_end)] - x_prev) / dt,
            trajectory,
            report,
        });
    }
    equilibria.sort_by(|a, b| b.report.potential_value.total_cmp(&a.report.potential_value));
    Ok(DecisionResult { equilibria, failures })
}
