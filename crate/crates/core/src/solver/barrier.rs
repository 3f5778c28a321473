//! Log-barrier Newton method with an active-set polish.
//!
//! The barrier iterates maximize `φ(a) + μ Σ log(b_m − G_mᵀa)` for a
//! decreasing `μ`; each centering step is a damped Newton step on the
//! exact Hessian. After the last stage the constraints that look active
//! (`λ_m > s_m`) are fixed as equalities and a few equality-constrained
//! Newton steps drive the KKT residual to round-off.

use log::trace;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::polytope::{LinearConstraint, Polytope};
use crate::error::{GameError, Result};
use crate::game::{GameParams, JointAction, PotentialGame};
use crate::serde_util::dvec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub grad_tol: f64,
    pub max_newton_steps: usize,
    pub mu_init: f64,
    pub mu_factor: f64,
    pub mu_final: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub slack_tol: f64,
    pub lambda_tol: f64,
    pub polish: bool,
    /// Optional starting point; used only when strictly feasible.
    #[serde(skip)]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            grad_tol: 1e-8,
            max_newton_steps: 200,
            mu_init: 1.0,
            mu_factor: 0.1,
            mu_final: 1e-8,
            armijo: 1e-4,
            shrink: 0.5,
            slack_tol: 1e-7,
            lambda_tol: 1e-7,
            polish: true,
            warm_start: None,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.grad_tol,
            self.mu_init,
            self.mu_final,
            self.armijo,
            self.slack_tol,
            self.lambda_tol,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.max_newton_steps == 0 {
            return Err(GameError::Config("solver options must be positive".into()));
        }
        if !(self.mu_factor > 0.0 && self.mu_factor < 1.0)
            || !(self.shrink > 0.0 && self.shrink < 1.0)
        {
            return Err(GameError::Config(
                "mu_factor and shrink must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Interior,
    Boundary,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub label: usize,
    #[serde(with = "dvec")]
    pub argmax: JointAction,
    pub potential_value: f64,
    pub active_constraints: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
    /// `‖∇φ − Σ λ_m G_m‖_∞ / (1 + ‖∇φ‖_∞)`.
    pub kkt_residual: f64,
    /// Potential at the end of each barrier stage.
    pub stage_potentials: Vec<f64>,
    /// Barrier objective after each accepted step, tagged by stage.
    #[serde(skip)]
    pub ascent_trace: Vec<(usize, f64)>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        matches!(self.status, SolveStatus::Interior | SolveStatus::Boundary)
    }

    /// Whether the barrier objective never decreased within a stage.
    pub fn ascent_is_monotone(&self) -> bool {
        self.ascent_trace
            .windows(2)
            .all(|w| w[0].0 != w[1].0 || w[1].1 >= w[0].1)
    }
}

trait Objective {
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

struct GameObjective<'a, G: ?Sized> {
    game: &'a G,
    theta: &'a GameParams,
}

impl<G: PotentialGame + ?Sized> Objective for GameObjective<'_, G> {
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.game.potential(self.theta, x)
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.game.potential_gradient(self.theta, x)
    }
    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.game.potential_hessian(self.theta, x)
    }
}

/// Phase-1 objective over `(a, s)`: maximize the common slack `s`.
struct MaxSlack {
    dim: usize,
}

impl Objective for MaxSlack {
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(x[self.dim])
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(x.len());
        g[self.dim] = 1.0;
        Ok(g)
    }
    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(x.len(), x.len()))
    }
}

struct BarrierRun {
    x: DVector<f64>,
    mu: f64,
    steps: usize,
    hit_cap: bool,
    stage_values: Vec<f64>,
    trace: Vec<(usize, f64)>,
}

fn slacks(constraints: &[LinearConstraint], x: &[f64]) -> Vec<f64> {
    constraints.iter().map(|c| c.slack(x)).collect()
}

fn barrier_value(
    obj: &dyn Objective,
    constraints: &[LinearConstraint],
    x: &DVector<f64>,
    mu: f64,
) -> Option<f64> {
    let mut v = obj.value(x).ok()?;
    for c in constraints {
        let s = c.slack(x.as_slice());
        if !(s > 0.0) {
            return None;
        }
        v += mu * s.ln();
    }
    v.is_finite().then_some(v)
}

/// Solves `(−H) Δ = g`, shifting the diagonal if `−H` is not numerically
/// positive definite. `None` when no shift helps.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let neg = -h;
    if let Some(ch) = Cholesky::new(neg.clone()) {
        let d = ch.solve(g);
        if d.iter().all(|v| v.is_finite()) {
            return Some(d);
        }
    }
    let scale = 1.0 + neg.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut shift = 1e-12 * scale;
    for _ in 0..8 {
        let mut m = neg.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        if let Some(ch) = Cholesky::new(m) {
            let d = ch.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift *= 100.0;
    }
    None
}

fn run_barrier(
    obj: &dyn Objective,
    constraints: &[LinearConstraint],
    x0: DVector<f64>,
    opts: &SolveOptions,
    mu_final: f64,
) -> Result<BarrierRun> {
    let n = x0.len();
    let mut x = x0;
    let mut mu = opts.mu_init.max(mu_final);
    let mut steps = 0usize;
    let mut hit_cap = false;
    let mut stage_values = Vec::new();
    let mut trace = Vec::new();
    let mut stage = 0usize;

    'stages: loop {
        let last_stage = mu <= mu_final;
        let stage_tol = if last_stage { 1e-13 } else { 1e-9 };
        loop {
            if steps >= opts.max_newton_steps {
                hit_cap = true;
                break 'stages;
            }
            let s = slacks(constraints, x.as_slice());
            let mut g = obj.gradient(&x)?;
            let mut h = obj.hessian(&x)?;
            for (c, &sm) in constraints.iter().zip(&s) {
                let inv = 1.0 / sm;
                for &(j, cj) in &c.terms {
                    g[j] -= mu * cj * inv;
                    for &(k, ck) in &c.terms {
                        h[(j, k)] -= mu * cj * ck * inv * inv;
                    }
                }
            }
            let (dir, newton) = match newton_direction(&h, &g) {
                Some(d) => (d, true),
                None => {
                    trace!("Newton direction failed; using gradient step");
                    let scale = 1.0 + g.amax();
                    (&g / scale, false)
                }
            };
            let dec = g.dot(&dir);
            if !dec.is_finite() {
                return Err(GameError::NonFiniteUtility("barrier gradient".into()));
            }
            if newton && dec * 0.5 <= stage_tol * (1.0 + n as f64).sqrt() {
                break;
            }
            // Largest step that keeps every slack positive.
            let mut t_max = f64::INFINITY;
            for (c, &sm) in constraints.iter().zip(&s) {
                let gd: f64 = c.terms.iter().map(|&(j, cj)| cj * dir[j]).sum();
                if gd > 0.0 {
                    t_max = t_max.min(sm / gd);
                }
            }
            let mut t = if t_max.is_finite() {
                (0.99 * t_max).min(1.0)
            } else {
                1.0
            };
            let f0 = barrier_value(obj, constraints, &x, mu).ok_or_else(|| {
                GameError::NonFiniteUtility("barrier objective at iterate".into())
            })?;
            let mut accepted = None;
            while t > 1e-18 {
                let cand = &x + &dir * t;
                if let Some(f1) = barrier_value(obj, constraints, &cand, mu) {
                    if f1 >= f0 + opts.armijo * t * dec {
                        accepted = Some((cand, f1));
                        break;
                    }
                }
                t *= opts.shrink;
            }
            steps += 1;
            match accepted {
                Some((cand, f1)) => {
                    x = cand;
                    trace.push((stage, f1));
                }
                // Round-off floor; the iterate is as centered as it gets.
                None => break,
            }
        }
        stage_values.push(obj.value(&x)?);
        if last_stage {
            break;
        }
        mu = (mu * opts.mu_factor).max(mu_final);
        stage += 1;
    }
    Ok(BarrierRun {
        x,
        mu,
        steps,
        hit_cap,
        stage_values,
        trace,
    })
}

/// A strictly interior point with slack at least `1e-6` everywhere.
///
/// Uses the polytope's hint when it qualifies, the box midpoint for pure
/// boxes, and otherwise a phase-1 barrier solve that maximizes the
/// smallest slack.
pub fn find_interior_point(poly: &Polytope) -> Result<JointAction> {
    const MIN_SLACK: f64 = 1e-6;
    if let Some(h) = &poly.hint {
        if h.len() == poly.dim() && poly.min_slack(h) >= MIN_SLACK {
            return Ok(DVector::from_column_slice(h));
        }
    }
    let bounds = poly.coordinate_bounds();
    let mid: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let mid_slack = poly.min_slack(&mid);
    if poly.is_box() {
        return if mid_slack >= MIN_SLACK {
            Ok(DVector::from_vec(mid))
        } else {
            Err(GameError::Infeasible(mid_slack))
        };
    }
    let cap = 1.0;
    if mid_slack > cap {
        return Ok(DVector::from_vec(mid));
    }

    // Phase 1 over (a, s): G a + s ≤ b, s ≤ cap.
    let n = poly.dim();
    let mut aug: Vec<LinearConstraint> = poly
        .constraints()
        .iter()
        .map(|c| {
            let mut terms = c.terms.clone();
            terms.push((n, 1.0));
            LinearConstraint {
                terms,
                bound: c.bound,
                kind: c.kind,
            }
        })
        .collect();
    aug.push(LinearConstraint {
        terms: vec![(n, 1.0)],
        bound: cap,
        kind: super::ConstraintKind::Other,
    });
    let mut x0 = DVector::from_vec(mid);
    x0 = x0.push(mid_slack - 1.0);
    let opts = SolveOptions {
        max_newton_steps: 400,
        ..SolveOptions::default()
    };
    let run = run_barrier(&MaxSlack { dim: n }, &aug, x0, &opts, 1e-7)?;
    let a = run.x.rows(0, n).into_owned();
    let best = poly.min_slack(a.as_slice());
    if best >= MIN_SLACK {
        Ok(a)
    } else {
        Err(GameError::Infeasible(best))
    }
}

/// Equality-constrained Newton refinement on the constraints in `active`.
/// Returns the refined point and multipliers, or `None` if it does not
/// yield a valid KKT point.
fn polish<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    poly: &Polytope,
    x0: &DVector<f64>,
    active: &[usize],
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = x0.len();
    let k = active.len();
    if k > n {
        return None;
    }
    let normals: Vec<DVector<f64>> = active
        .iter()
        .map(|&m| poly.constraints()[m].normal(n))
        .collect();
    let mut x = x0.clone();
    let mut lam = vec![0.0; k];
    let mut converged = false;
    for _ in 0..30 {
        let g = game.potential_gradient(theta, &x).ok()?;
        let h = game.potential_hessian(theta, &x).ok()?;
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&g));
        for (c, gm) in normals.iter().enumerate() {
            kkt.view_mut((0, n + c), (n, 1)).copy_from(&(-gm));
            kkt.view_mut((n + c, 0), (1, n)).copy_from(&gm.transpose());
            rhs[n + c] = poly.constraints()[active[c]].slack(x.as_slice());
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let step = sol.rows(0, n).into_owned();
        x += &step;
        lam = sol.rows(n, k).iter().copied().collect();
        if step.amax() <= 1e-13 * (1.0 + x.amax()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    let lam_scale = 1.0 + lam.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if lam.iter().any(|&l| l < -1e-9 * lam_scale) {
        return None;
    }
    if !poly.contains(x.as_slice(), 1e-10) {
        return None;
    }
    Some((x, lam.into_iter().map(|l| l.max(0.0)).collect()))
}

/// Maximizes `φ(θ, ·)` over `poly`. `φ` must be strictly concave and
/// twice differentiable on the interior.
///
/// Non-convergence is reported through [`SolveStatus::MaxIter`] and an
/// empty polytope through [`SolveStatus::Infeasible`]; evaluation errors
/// propagate.
pub fn maximize_on_polytope<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    poly: &Polytope,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    let n = game.action_dim();
    if poly.dim() != n {
        return Err(GameError::Dimension {
            expected: n,
            got: poly.dim(),
        });
    }
    if theta.len() != game.num_params() {
        return Err(GameError::Dimension {
            expected: game.num_params(),
            got: theta.len(),
        });
    }
    let start = match opts
        .warm_start
        .as_ref()
        .filter(|w| w.len() == n && poly.min_slack(w) > 0.0)
    {
        Some(w) => DVector::from_column_slice(w),
        None => match find_interior_point(poly) {
            Ok(p) => p,
            Err(GameError::Infeasible(best)) => {
                return Ok(SolveReport {
                    label: poly.label,
                    argmax: DVector::zeros(n),
                    potential_value: f64::NAN,
                    active_constraints: vec![],
                    multipliers: vec![0.0; poly.len()],
                    iterations: 0,
                    status: SolveStatus::Infeasible,
                    kkt_residual: best,
                    stage_potentials: vec![],
                    ascent_trace: vec![],
                })
            }
            Err(e) => return Err(e),
        },
    };
    let obj = GameObjective { game, theta };
    let run = run_barrier(&obj, poly.constraints(), start, opts, opts.mu_final)?;
    let mut x = run.x;
    let s = poly.slacks(x.as_slice());
    let mut lambda: Vec<f64> = s.iter().map(|&sm| run.mu / sm).collect();
    let mut iterations = run.steps;

    if opts.polish && !run.hit_cap {
        let guess: Vec<usize> = (0..poly.len()).filter(|&m| lambda[m] > s[m]).collect();
        if let Some((xp, lam)) = polish(game, theta, poly, &x, &guess) {
            x = xp;
            lambda = vec![0.0; poly.len()];
            for (&m, l) in guess.iter().zip(lam) {
                lambda[m] = l;
            }
            iterations += 1;
        }
    }

    let s = poly.slacks(x.as_slice());
    let active: Vec<usize> = (0..poly.len())
        .filter(|&m| s[m] <= opts.slack_tol)
        .collect();
    let grad = game.potential_gradient(theta, &x)?;
    let mut resid = grad.clone();
    for (c, &l) in poly.constraints().iter().zip(&lambda) {
        for &(j, cj) in &c.terms {
            resid[j] -= l * cj;
        }
    }
    let kkt_residual = resid.amax() / (1.0 + grad.amax());
    let status = if run.hit_cap {
        SolveStatus::MaxIter
    } else if active.is_empty() {
        SolveStatus::Interior
    } else {
        SolveStatus::Boundary
    };
    Ok(SolveReport {
        label: poly.label,
        potential_value: game.potential(theta, &x)?,
        argmax: x,
        active_constraints: active,
        multipliers: lambda.into_iter().map(|l| l.max(0.0)).collect(),
        iterations,
        status,
        kkt_residual,
        stage_potentials: run.stage_values,
        ascent_trace: run.trace,
    })
}
