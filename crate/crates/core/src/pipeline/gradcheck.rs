//! Implicit-function Jacobians against finite differences of the solver on
//! random interior instances.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::GameParams;
use crate::implicit::{backward_interior, fd_jacobian, JacobianMethod, SubspaceFamily};
use crate::par::ExecMode;
use crate::scenarios::{DrivingConfig, PedestrianConfig, PedestrianParams, PedestrianScenario, RoadGeometry};
use crate::solver::{maximize_on_polytope, Polytope, SolveOptions};

use super::synth::{attempt, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradcheckScenario {
    Pedestrian,
    /// Two-car merge with a ten-step horizon.
    Driving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub tolerance: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Smallest constraint slack for an argmax to count as interior.
    pub interior_slack: f64,
    pub max_draws: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { instances: 20, tolerance: 1e-3, fd_step: 1e-4, interior_slack: 1e-4, max_draws: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub subspace: usize,
    pub action_dim: usize,
    pub num_params: usize,
    pub method: JacobianMethod,
    /// `‖J_ift − J_fd‖_F / ‖J_fd‖_F`.
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub scenario: GradcheckScenario,
    pub seed: u64,
    pub tolerance: f64,
    pub cases: Vec<GradcheckCase>,
    /// Draws whose argmax touched a constraint or failed to converge.
    pub rejected_draws: usize,
    pub max_rel_err: f64,
    pub passed: usize,
    pub pass: bool,
}

/// Frobenius relative difference, with a unit floor on the reference norm.
pub fn jacobian_rel_err(ift: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    (ift - fd).norm() / fd.norm().max(1.0e-12)
}

struct Instance<F> {
    family: F,
    theta: GameParams,
    subspace: usize,
}

fn pedestrian_instance<R: Rng + ?Sized>(rng: &mut R) -> Result<Instance<PedestrianScenario>> {
    let config = PedestrianConfig {
        z: [rng.random_range(-8.0..-2.0), rng.random_range(-8.0..-2.0)],
        ..PedestrianConfig::default()
    };
    let family = PedestrianScenario::new(config)?;
    let theta = PedestrianParams {
        vel_weight: [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)],
        desired_speed: [rng.random_range(0.5..2.5), rng.random_range(0.5..2.5)],
    }
    .to_vector();
    let subspace = rng.random_range(0..family.len());
    Ok(Instance { family, theta, subspace })
}

fn driving_instance<R: Rng + ?Sized>(rng: &mut R, solve: &SolveOptions) -> Result<Option<Instance<crate::scenarios::DrivingScenario>>> {
    let driving = DrivingConfig { horizon_steps: 10, ..DrivingConfig::default() };
    let cfg = SynthConfig { merger_levels: vec![-1.8, -1.9, -2.0, -2.1], ..SynthConfig::default() };
    let Some(s) = attempt(&cfg, &driving, &RoadGeometry::default(), solve, String::new(), rng)? else {
        return Ok(None);
    };
    let family = s.scene.scenario(&driving)?;
    Ok(Some(Instance { family, theta: s.theta, subspace: s.subspace }))
}

/// Solves the instance and returns the interior argmax's Jacobians, or
/// `None` when the argmax is not interior.
fn check<F: SubspaceFamily>(
    inst: &Instance<F>,
    opts: &GradcheckOptions,
    solve: &SolveOptions,
    exec: ExecMode,
) -> Result<Option<GradcheckCase>> {
    let game = inst.family.game(inst.subspace);
    let poly: &Polytope = inst.family.polytope(inst.subspace);
    let report = maximize_on_polytope(game.as_ref(), &inst.theta, poly, solve)?;
    if !report.converged() || poly.min_slack(report.argmax.as_slice()) < opts.interior_slack {
        return Ok(None);
    }
    let ift = backward_interior(game.as_ref(), &inst.theta, &report.argmax)?;
    let fd = fd_jacobian(game.as_ref(), &inst.theta, poly, opts.fd_step, solve, Some(&report.argmax), exec)?;
    let rel_err = jacobian_rel_err(&ift.matrix, &fd);
    Ok(Some(GradcheckCase {
        subspace: inst.subspace,
        action_dim: game.action_dim(),
        num_params: inst.theta.len(),
        method: ift.method,
        rel_err,
        pass: rel_err <= opts.tolerance,
    }))
}

pub fn gradcheck(
    scenario: GradcheckScenario,
    seed: u64,
    opts: &GradcheckOptions,
    solve: &SolveOptions,
    exec: ExecMode,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = 0;
    let mut rejected = 0;
    // instance draws are sequential so the stream stays seed-determined
    let mut cases = Vec::with_capacity(opts.instances);
    while cases.len() < opts.instances {
        if draws >= opts.max_draws {
            return Err(GameError::Data(format!(
                "only {} interior instances in {draws} draws",
                cases.len()
            )));
        }
        draws += 1;
        let case = match scenario {
            GradcheckScenario::Pedestrian => check(&pedestrian_instance(&mut rng)?, opts, solve, exec),
            GradcheckScenario::Driving => match driving_instance(&mut rng, solve)? {
                Some(inst) => check(&inst, opts, solve, exec),
                None => Ok(None),
            },
        };
        match case {
            Ok(Some(c)) => cases.push(c),
            Ok(None) => rejected += 1,
            Err(e) => {
                log::debug!("gradcheck draw {draws}: {e}");
                rejected += 1;
            }
        }
    }
    let max_rel_err = cases.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let passed = cases.iter().filter(|c| c.pass).count();
    Ok(GradcheckReport {
        scenario,
        seed,
        tolerance: opts.tolerance,
        pass: passed == cases.len(),
        cases,
        rejected_draws: rejected,
        max_rel_err,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pedestrian_gradcheck_passes() {
        let opts = GradcheckOptions { instances: 5, ..GradcheckOptions::default() };
        let r = gradcheck(GradcheckScenario::Pedestrian, 42, &opts, &SolveOptions::default(), ExecMode::Sequential).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.cases.len(), 5);
    }

    #[test]
    fn driving_gradcheck_passes() {
        let opts = GradcheckOptions { instances: 2, ..GradcheckOptions::default() };
        let r = gradcheck(GradcheckScenario::Driving, 3, &opts, &SolveOptions::default(), ExecMode::Parallel).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
