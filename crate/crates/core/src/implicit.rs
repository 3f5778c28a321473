//! The game-solver implicit layer `θ ↦ (a*_k)_k`.
//!
//! Forward solves one concave maximization per refined subspace. Backward
//! differentiates the argmax through the stationarity condition
//! `∇_a φ(θ, a) = 0` at interior solutions, and through the KKT system with
//! one active hyperplane at boundary solutions. Central differences of the
//! solver map serve as the reference.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{GameParams, JointAction, PotentialGame};
use crate::par::{self, ExecMode};
use crate::serde_util::dmat;
use crate::solver::{maximize_on_polytope, Polytope, SolveOptions, SolveReport};

/// An indexed collection of action subspaces, each carrying the game
/// restricted to it.
pub trait SubspaceFamily: Sync {
    fn len(&self) -> usize;

    fn polytope(&self, k: usize) -> &Polytope;

    fn game(&self, k: usize) -> Box<dyn PotentialGame + '_>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One game on one or more polytopes.
pub struct SharedGameFamily<G> {
    pub game: G,
    pub polytopes: Vec<Polytope>,
}

impl<G: PotentialGame> SubspaceFamily for SharedGameFamily<G> {
    fn len(&self) -> usize {
        self.polytopes.len()
    }
    fn polytope(&self, k: usize) -> &Polytope {
        &self.polytopes[k]
    }
    fn game(&self, _k: usize) -> Box<dyn PotentialGame + '_> {
        Box::new(&self.game)
    }
}

impl<G: PotentialGame + ?Sized> PotentialGame for &G {
    fn num_agents(&self) -> usize {
        (**self).num_agents()
    }
    fn agent_dim(&self) -> usize {
        (**self).agent_dim()
    }
    fn num_params(&self) -> usize {
        (**self).num_params()
    }
    fn time_grid(&self) -> &crate::game::TimeGrid {
        (**self).time_grid()
    }
    fn stage_terms(
        &self,
        theta: &GameParams,
        a: &JointAction,
        t: usize,
    ) -> Result<crate::game::StageTerms> {
        (**self).stage_terms(theta, a, t)
    }
    fn potential_gradient(&self, theta: &GameParams, a: &JointAction) -> Result<DVector<f64>> {
        (**self).potential_gradient(theta, a)
    }
    fn potential_hessian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>> {
        (**self).potential_hessian(theta, a)
    }
    fn mixed_jacobian(&self, theta: &GameParams, a: &JointAction) -> Result<DMatrix<f64>> {
        (**self).mixed_jacobian(theta, a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitForwardResult {
    pub solutions: BTreeMap<usize, SolveReport>,
    pub failures: BTreeMap<usize, String>,
}

impl ImplicitForwardResult {
    pub fn argmax(&self, k: usize) -> Option<&JointAction> {
        self.solutions.get(&k).map(|r| &r.argmax)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMethod {
    InteriorIft,
    BoundaryKkt,
    ActiveSetKkt,
    FiniteDifference,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitJacobian {
    #[serde(with = "dmat")]
    pub matrix: DMatrix<f64>,
    pub method: JacobianMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackwardMode {
    #[default]
    Auto,
    ForceFd,
}

/// What `backward` does when more than one constraint is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MultiActivePolicy {
    #[default]
    FiniteDifference,
    Zero,
    /// Equality-constrained KKT system on every strongly active constraint.
    ActiveSetKkt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackwardOptions {
    pub mode: BackwardMode,
    pub multi_active: MultiActivePolicy,
    /// Relative finite-difference step: `h_j = fd_step · (1 + |θ_j|)`.
    pub fd_step: f64,
    pub exec: ExecMode,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            mode: BackwardMode::Auto,
            multi_active: MultiActivePolicy::FiniteDifference,
            fd_step: 1e-4,
            exec: ExecMode::Parallel,
        }
    }
}

/// Solves every refined subspace. Fails only if all of them fail.
pub fn forward<F: SubspaceFamily + ?Sized>(
    family: &F,
    theta: &GameParams,
    refined: &[usize],
    opts: &SolveOptions,
    exec: ExecMode,
) -> Result<ImplicitForwardResult> {
    let outcomes = par::map(exec, refined, |&k| {
        if k >= family.len() {
            return (
                k,
                Err(GameError::InvalidParams(format!(
                    "subspace {k} out of range"
                ))),
            );
        }
        let game = family.game(k);
        (
            k,
            maximize_on_polytope(game.as_ref(), theta, family.polytope(k), opts),
        )
    });
    let mut solutions = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for (k, out) in outcomes {
        match out {
            Ok(r) if r.converged() => {
                solutions.insert(k, r);
            }
            Ok(r) => {
                failures.insert(k, format!("{:?}", r.status));
            }
            Err(e) => {
                failures.insert(k, e.to_string());
            }
        }
    }
    if solutions.is_empty() && !refined.is_empty() {
        let summary: Vec<String> = failures.iter().map(|(k, e)| format!("{k}: {e}")).collect();
        return Err(GameError::AllSubspacesFailed(summary.join("; ")));
    }
    Ok(ImplicitForwardResult {
        solutions,
        failures,
    })
}

/// `J_θ g = −(H_a φ)⁻¹ J_θ ∇_a φ` at an interior argmax.
pub fn backward_interior<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    a_star: &JointAction,
) -> Result<ImplicitJacobian> {
    let h = game.potential_hessian(theta, a_star)?;
    let mixed = game.mixed_jacobian(theta, a_star)?;
    let chol = Cholesky::new(-h).ok_or(GameError::SingularHessian)?;
    // (−H) J = J_θ∇φ  ⇔  J = −H⁻¹ J_θ∇φ
    let j = chol.solve(&mixed);
    if j.iter().any(|v| !v.is_finite()) {
        return Err(GameError::SingularHessian);
    }
    Ok(ImplicitJacobian {
        matrix: j,
        method: JacobianMethod::InteriorIft,
    })
}

fn kkt_jacobian<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    a_star: &JointAction,
    normals: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    let n = a_star.len();
    let k = normals.len();
    let h = game.potential_hessian(theta, a_star)?;
    let mixed = game.mixed_jacobian(theta, a_star)?;
    let p = mixed.ncols();
    // The λ*-scaled lower block row is divided through by λ*, leaving the
    // symmetric saddle-point matrix [[H, G], [Gᵀ, 0]].
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    for (c, g) in normals.iter().enumerate() {
        kkt.view_mut((0, n + c), (n, 1)).copy_from(g);
        kkt.view_mut((n + c, 0), (1, n)).copy_from(&g.transpose());
    }
    let mut rhs = DMatrix::zeros(n + k, p);
    rhs.view_mut((0, 0), (n, p)).copy_from(&(-mixed));
    let sol = kkt.lu().solve(&rhs).ok_or(GameError::SingularKkt)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(GameError::SingularKkt);
    }
    Ok(sol.rows(0, n).into_owned())
}

/// Jacobian at an argmax lying on exactly one hyperplane `Gᵀa = b` with
/// multiplier `λ* > λ_tol`: the top `n·d` rows of
/// `−[[H, G], [λ* Gᵀ, 0]]⁻¹ [J_θ∇φ; 0]`.
pub fn backward_boundary<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    a_star: &JointAction,
    normal: &DVector<f64>,
    lambda_star: f64,
    lambda_tol: f64,
) -> Result<ImplicitJacobian> {
    if !(lambda_star > lambda_tol) {
        return Err(GameError::BoundaryPrecondition(format!(
            "multiplier {lambda_star:e} not above {lambda_tol:e}"
        )));
    }
    let m = kkt_jacobian(game, theta, a_star, std::slice::from_ref(normal))?;
    Ok(ImplicitJacobian {
        matrix: m,
        method: JacobianMethod::BoundaryKkt,
    })
}

/// Same saddle-point system with several active hyperplanes.
pub fn backward_active_set<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    a_star: &JointAction,
    normals: &[DVector<f64>],
) -> Result<ImplicitJacobian> {
    let m = kkt_jacobian(game, theta, a_star, normals)?;
    Ok(ImplicitJacobian {
        matrix: m,
        method: JacobianMethod::ActiveSetKkt,
    })
}

/// Central differences of the solver map,
/// `(g(θ + h_j e_j) − g(θ − h_j e_j)) / 2h_j` with `h_j = h (1 + |θ_j|)`.
///
/// `center`, when given and strictly feasible, warm-starts each probe.
pub fn fd_jacobian<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    poly: &Polytope,
    h: f64,
    opts: &SolveOptions,
    center: Option<&JointAction>,
    exec: ExecMode,
) -> Result<DMatrix<f64>> {
    let n = game.action_dim();
    let p = theta.len();
    let mut probe_opts = opts.clone();
    if let Some(c) = center.filter(|c| poly.min_slack(c.as_slice()) > 1e-9) {
        probe_opts.warm_start = Some(c.iter().copied().collect());
        probe_opts.mu_init = opts.mu_final.max(1e-6).min(opts.mu_init);
    }
    let cols = par::map_range(exec, p, |j| -> Result<DVector<f64>> {
        let step = h * (1.0 + theta[j].abs());
        let solve = |sign: f64| -> Result<DVector<f64>> {
            let mut th = theta.clone();
            th[j] += sign * step;
            let r = maximize_on_polytope(game, &th, poly, &probe_opts)?;
            if !r.converged() {
                return Err(GameError::MaxIter(r.iterations));
            }
            Ok(r.argmax)
        };
        let plus = solve(1.0)?;
        let minus = solve(-1.0)?;
        Ok((plus - minus) / (2.0 * step))
    });
    let mut out = DMatrix::zeros(n, p);
    for (j, c) in cols.into_iter().enumerate() {
        out.set_column(j, &c?);
    }
    Ok(out)
}

/// Jacobian of one solved subspace, dispatched on its active set.
pub fn backward_one<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    poly: &Polytope,
    report: &SolveReport,
    solve_opts: &SolveOptions,
    opts: &BackwardOptions,
) -> Result<ImplicitJacobian> {
    let fd = || -> Result<ImplicitJacobian> {
        let m = fd_jacobian(
            game,
            theta,
            poly,
            opts.fd_step,
            solve_opts,
            Some(&report.argmax),
            opts.exec,
        )?;
        Ok(ImplicitJacobian {
            matrix: m,
            method: JacobianMethod::FiniteDifference,
        })
    };
    if opts.mode == BackwardMode::ForceFd {
        return fd();
    }
    let a = &report.argmax;
    let n = a.len();
    let active = &report.active_constraints;
    let strong: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&m| report.multipliers[m] > solve_opts.lambda_tol)
        .collect();
    match active.len() {
        0 => backward_interior(game, theta, a),
        1 => {
            let m = active[0];
            let g = poly.constraints()[m].normal(n);
            match backward_boundary(
                game,
                theta,
                a,
                &g,
                report.multipliers[m],
                solve_opts.lambda_tol,
            ) {
                Ok(j) => Ok(j),
                Err(GameError::BoundaryPrecondition(msg)) => {
                    warn!("subspace {}: {msg}; falling back", poly.label);
                    multi_active(game, theta, poly, report, &strong, opts, fd)
                }
                Err(e) => Err(e),
            }
        }
        _ => {
            warn!(
                "subspace {}: {} active constraints",
                poly.label,
                active.len()
            );
            multi_active(game, theta, poly, report, &strong, opts, fd)
        }
    }
}

fn multi_active<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    poly: &Polytope,
    report: &SolveReport,
    strong: &[usize],
    opts: &BackwardOptions,
    fd: impl Fn() -> Result<ImplicitJacobian>,
) -> Result<ImplicitJacobian> {
    let n = report.argmax.len();
    match opts.multi_active {
        MultiActivePolicy::FiniteDifference => fd(),
        MultiActivePolicy::Zero => Ok(ImplicitJacobian {
            matrix: DMatrix::zeros(n, theta.len()),
            method: JacobianMethod::Zero,
        }),
        MultiActivePolicy::ActiveSetKkt => {
            if strong.is_empty() {
                let mut j = backward_interior(game, theta, &report.argmax)?;
                j.method = JacobianMethod::ActiveSetKkt;
                return Ok(j);
            }
            let normals: Vec<DVector<f64>> = strong
                .iter()
                .map(|&m| poly.constraints()[m].normal(n))
                .collect();
            backward_active_set(game, theta, &report.argmax, &normals)
        }
    }
}

/// Jacobians for every solved subspace of a forward result.
pub fn backward<F: SubspaceFamily + ?Sized>(
    family: &F,
    theta: &GameParams,
    result: &ImplicitForwardResult,
    solve_opts: &SolveOptions,
    opts: &BackwardOptions,
) -> BTreeMap<usize, Result<ImplicitJacobian>> {
    let items: Vec<(&usize, &SolveReport)> = result.solutions.iter().collect();
    let inner = BackwardOptions {
        exec: ExecMode::Sequential,
        ..opts.clone()
    };
    par::map(opts.exec, &items, |&(&k, report)| {
        let game = family.game(k);
        (
            k,
            backward_one(
                game.as_ref(),
                theta,
                family.polytope(k),
                report,
                solve_opts,
                &inner,
            ),
        )
    })
    .into_iter()
    .collect()
}
