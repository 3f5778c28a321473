//! Two-phase training: refinement nets on subspace labels, then the
//! preference net and the shared distance weight through the implicit layer.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{GameParams, JointAction};
use crate::implicit::{backward_one, BackwardOptions, JacobianMethod, MultiActivePolicy, SubspaceFamily};
use crate::nets::StepDistribution;
use crate::par::{self, ExecMode};
use crate::scenarios::{DrivingConfig, DrivingLayout, DrivingScenario};
use crate::solver::{find_interior_point, maximize_on_polytope, SolveOptions};

use super::eval::{aggregate_folds, evaluate, fold_assignment, EvalReport};
use super::model::{ModelConfig, TglModel};
use super::scene::{label_scene, LabelSource, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Momentum,
    Adam,
    /// Limited-memory BFGS direction with a capped fixed step.
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta2: f64,
    pub eps: f64,
    pub history: usize,
    /// Euclidean cap on one update.
    pub max_step: f64,
    /// L2 penalty coefficient added to the gradient.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Momentum,
            lr: 1e-3,
            momentum: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            history: 8,
            max_step: 1.0,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub max_epochs: usize,
    pub patience: usize,
    /// Early stopping is not armed before this epoch.
    pub min_epochs: usize,
    /// Share of scenes held out for early stopping; with fewer than five
    /// scenes the training set doubles as validation.
    pub validation_fraction: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig { max_epochs: 500, patience: 20, min_epochs: 0, validation_fraction: 0.2, optimizer: OptimizerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub refinement: PhaseConfig,
    pub full: PhaseConfig,
    pub seed: u64,
    pub multi_active: MultiActivePolicy,
    pub solve: SolveOptions,
    /// Warm starts are moved this fraction toward an interior point.
    pub warm_pull: f64,
    /// Barrier weight for warm-started solves.
    pub warm_mu: f64,
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            refinement: PhaseConfig {
                // validation NLL plateaus for a few hundred epochs before weight
                // decay prunes the spurious features
                min_epochs: 300,
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::Adam,
                    lr: 3e-3,
                    weight_decay: 0.05,
                    ..OptimizerConfig::default()
                },
                ..PhaseConfig::default()
            },
            full: PhaseConfig::default(),
            seed: 0,
            multi_active: MultiActivePolicy::ActiveSetKkt,
            solve: SolveOptions::default(),
            warm_pull: 0.05,
            warm_mu: 1e-4,
            exec: ExecMode::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Scenes left out before training, with the reason.
    pub excluded: Vec<String>,
    /// Label counts per subspace index.
    pub label_counts: Vec<(usize, usize)>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("phase,epoch,train_loss,val_loss,skipped\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.phase, e.epoch, e.train_loss, e.val_loss, e.skipped));
        }
        s
    }
}

/// First-order and limited-memory quasi-Newton updates on a flat vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    pairs: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, dim: usize) -> Self {
        Optimizer { cfg, m: vec![0.0; dim], v: vec![0.0; dim], t: 0, prev: None, pairs: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let c = self.cfg.clone();
        let decayed: Vec<f64>;
        let grad = if c.weight_decay > 0.0 {
            decayed = grad.iter().zip(params.iter()).map(|(g, p)| g + c.weight_decay * p).collect();
            &decayed[..]
        } else {
            grad
        };
        let mut delta: Vec<f64> = match c.kind {
            OptimizerKind::Momentum => {
                for (m, g) in self.m.iter_mut().zip(grad) {
                    *m = c.momentum * *m + g;
                }
                self.m.iter().map(|m| -c.lr * m).collect()
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let b1 = 1.0 - c.momentum.powi(self.t);
                let b2 = 1.0 - c.beta2.powi(self.t);
                grad.iter()
                    .enumerate()
                    .map(|(j, &g)| {
                        self.m[j] = c.momentum * self.m[j] + (1.0 - c.momentum) * g;
                        self.v[j] = c.beta2 * self.v[j] + (1.0 - c.beta2) * g * g;
                        -c.lr * (self.m[j] / b1) / ((self.v[j] / b2).sqrt() + c.eps)
                    })
                    .collect()
            }
            OptimizerKind::Lbfgs => self.lbfgs_direction(params, grad),
        };
        let norm = dot(&delta, &delta).sqrt();
        if norm > c.max_step {
            let s = c.max_step / norm;
            delta.iter_mut().for_each(|d| *d *= s);
        }
        for (p, d) in params.iter_mut().zip(&delta) {
            *p += d;
        }
    }

    fn lbfgs_direction(&mut self, params: &[f64], grad: &[f64]) -> Vec<f64> {
        if let Some((px, pg)) = self.prev.take() {
            let s: Vec<f64> = params.iter().zip(&px).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad.iter().zip(&pg).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            // near convergence sy can underflow to a subnormal whose inverse is infinite
            if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && (1.0 / sy).is_finite() {
                self.pairs.push((s, y, 1.0 / sy));
                if self.pairs.len() > self.cfg.history.max(1) {
                    self.pairs.remove(0);
                }
            }
        }
        self.prev = Some((params.to_vec(), grad.to_vec()));
        let mut q = grad.to_vec();
        let mut alpha = vec![0.0; self.pairs.len()];
        for (k, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= alpha[k] * yi);
        }
        let gamma = match self.pairs.last() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => self.cfg.lr,
        };
        q.iter_mut().for_each(|qi| *qi *= gamma);
        for (k, (s, y, rho)) in self.pairs.iter().enumerate() {
            let beta = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (alpha[k] - beta) * si);
        }
        q.iter().map(|v| -v).collect()
    }
}

/// Early-stopped descent. `objective` returns training loss, gradient and
/// the number of skipped scenes; `validate` returns the validation loss.
/// Returns the parameters with the lowest validation loss.
fn descend(
    phase: u8,
    mut params: Vec<f64>,
    cfg: &PhaseConfig,
    log: &mut TrainLog,
    mut objective: impl FnMut(&[f64], usize) -> Result<(f64, Vec<f64>, usize)>,
    mut validate: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut opt = Optimizer::new(cfg.optimizer.clone(), params.len());
    let mut best = (f64::INFINITY, params.clone(), 0);
    let mut since = 0;
    for epoch in 0..cfg.max_epochs {
        let (train_loss, grad, skipped) = objective(&params, epoch)?;
        let val_loss = validate(&params)?;
        log.epochs.push(EpochLog { phase, epoch, train_loss, val_loss, skipped });
        log::debug!("phase {phase} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
            since = 0;
        } else {
            since += 1;
            if epoch >= cfg.min_epochs && since >= cfg.patience {
                break;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            log::warn!("phase {phase} epoch {epoch}: non-finite gradient, stopping");
            break;
        }
        opt.step(&mut params, &grad);
    }
    log.best_epoch = best.2;
    log.best_val_loss = best.0;
    Ok(best.1)
}

/// Seeded train/validation split of `0..n`. Below five scenes, or when
/// the validation share rounds to zero, both sides get every index.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = (n as f64 * fraction).round() as usize;
    if n < 5 || n_val == 0 {
        return (idx.clone(), idx);
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// A scene with its scenario and ground-truth subspace.
#[derive(Debug, Clone)]
pub struct LabeledScene {
    pub id: String,
    /// Features before standardization.
    pub raw_features: Vec<f64>,
    pub scenario: DrivingScenario,
    pub label: usize,
    pub label_source: LabelSource,
    pub future: JointAction,
}

impl LabeledScene {
    pub fn merge_step(&self) -> usize {
        self.scenario.subspaces[self.label].merge_step
    }
    pub fn merger_first(&self) -> bool {
        self.scenario.subspaces[self.label].merger_first
    }
}

/// Builds scenarios and labels; unlabelable scenes are dropped with a warning.
pub fn prepare_scenes(model: &TglModel, scenes: &[Scene], exec: ExecMode) -> (Vec<LabeledScene>, Vec<String>) {
    let out = par::map(exec, scenes, |s| -> Result<LabeledScene> {
        s.validate(&model.driving)?;
        let scenario = s.scenario(&model.driving)?;
        let (label, label_source) = label_scene(s, &scenario)?;
        if label_source == LabelSource::MergeRule {
            log::warn!("scene {}: labeled by the merge rule", s.id);
        }
        Ok(LabeledScene {
            id: s.id.clone(),
            raw_features: model.raw_features(&s.past, &s.geometry)?,
            scenario,
            label,
            label_source,
            future: s.future_action(),
        })
    });
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (s, r) in scenes.iter().zip(out) {
        match r {
            Ok(l) => kept.push(l),
            Err(e) => {
                log::warn!("scene {} skipped: {e}", s.id);
                dropped.push(format!("{}: {e}", s.id));
            }
        }
    }
    (kept, dropped)
}

fn label_counts(scenes: &[LabeledScene]) -> Vec<(usize, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for s in scenes {
        *counts.entry(s.label).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

fn scene_rng(seed: u64, epoch: usize, idx: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ ((epoch as u64) << 32) ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn refinement_params(model: &TglModel) -> Vec<f64> {
    let mut p = model.order.params();
    p.extend(model.time.params());
    p
}

fn set_refinement_params(model: &mut TglModel, p: &[f64]) -> Result<()> {
    let n = model.order.num_params();
    model.order.set_params(&p[..n])?;
    model.time.set_params(&p[n..])
}

/// Order cross-entropy plus merge-step negative log-likelihood.
fn refinement_loss(
    model: &TglModel,
    features: &[f64],
    m: usize,
    merger_first: bool,
    rng: Option<&mut ChaCha8Rng>,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let (_, _, cache) = model.refine_cached(features, rng)?;
    let p = cache.order.output();
    let o = usize::from(merger_first);
    let raw = cache.time.output();
    let (mean, ln_std) = model.step_params(raw);
    let (dist, dprob) = StepDistribution::with_gradients(mean, ln_std.exp(), model.driving.horizon_steps)?;
    let pm = dist.probs[m - 1];
    let loss = -p[o].max(1e-300).ln() - pm.ln();
    if !with_grad {
        return Ok((loss, Vec::new()));
    }
    let mut g_order = DVector::zeros(2);
    g_order[o] = -1.0 / p[o].max(1e-300);
    let (mut grad, _) = model.order.backward(&cache.order, &g_order)?;
    let slopes = model.step_param_slopes(raw);
    let g_time = DVector::from_vec(vec![-dprob[m - 1][0] / pm * slopes[0], -dprob[m - 1][1] / pm * slopes[1]]);
    let (gt, _) = model.time.backward(&cache.time, &g_time)?;
    grad.extend(gt);
    Ok((loss, grad))
}

/// Phase one: standardizes features on the training split and fits the
/// order and merge-step nets to subspace labels.
pub fn train_refinement(model: &mut TglModel, scenes: &[LabeledScene], cfg: &TrainConfig) -> Result<TrainLog> {
    if scenes.is_empty() {
        return Err(GameError::Data("no labeled scenes to train on".into()));
    }
    let mut log = TrainLog { label_counts: label_counts(scenes), ..TrainLog::default() };
    log::info!("label distribution: {:?}", log.label_counts);
    let (train, val) = split_indices(scenes.len(), cfg.refinement.validation_fraction, cfg.seed);
    let raw: Vec<Vec<f64>> = train.iter().map(|&i| scenes[i].raw_features.clone()).collect();
    model.fit_feature_norm(&raw)?;
    let base = model.clone();
    let eval_loss = |p: &[f64], idx: &[usize]| -> Result<f64> {
        let mut m = base.clone();
        set_refinement_params(&mut m, p)?;
        let losses = par::map(cfg.exec, idx, |&i| {
            let s = &scenes[i];
            refinement_loss(&m, &m.normalize(&s.raw_features), s.merge_step(), s.merger_first(), None, false)
        }.map(|r| r.0));
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / idx.len() as f64)
    };
    let best = descend(
        1,
        refinement_params(model),
        &cfg.refinement,
        &mut log,
        |p, epoch| {
            let mut m = base.clone();
            set_refinement_params(&mut m, p)?;
            let out = par::map(cfg.exec, &train, |&i| {
                let mut rng = scene_rng(cfg.seed, epoch, i);
                let s = &scenes[i];
                refinement_loss(&m, &m.normalize(&s.raw_features), s.merge_step(), s.merger_first(), Some(&mut rng), true)
            });
            let mut loss = 0.0;
            let mut grad = vec![0.0; p.len()];
            for r in out {
                let (l, g) = r?;
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let n = train.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            Ok((loss / n, grad, 0))
        },
        |p| eval_loss(p, &val),
    )?;
    set_refinement_params(model, &best)?;
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementAccuracy {
    /// Top cell equals the label.
    pub top1: f64,
    /// Label among the refined subspaces.
    pub in_refined: f64,
    pub order: f64,
    pub merge_step: f64,
}

pub fn refinement_accuracy(model: &TglModel, scenes: &[LabeledScene]) -> Result<RefinementAccuracy> {
    if scenes.is_empty() {
        return Err(GameError::Data("no scenes".into()));
    }
    let mut hits = [0usize; 4];
    for s in scenes {
        let (r, _) = model.refine(&model.normalize(&s.raw_features))?;
        hits[0] += usize::from(r.refined.first() == Some(&s.label));
        hits[1] += usize::from(r.refined.contains(&s.label));
        hits[2] += usize::from(r.merger_in_front() == s.merger_first());
        hits[3] += usize::from(r.steps.mode() == s.merge_step());
    }
    let n = scenes.len() as f64;
    Ok(RefinementAccuracy {
        top1: hits[0] as f64 / n,
        in_refined: hits[1] as f64 / n,
        order: hits[2] as f64 / n,
        merge_step: hits[3] as f64 / n,
    })
}

/// Mean Euclidean position error over agents and stages, with its gradient.
pub fn mae_loss(pred: &JointAction, truth: &JointAction, layout: &DrivingLayout) -> (f64, DVector<f64>) {
    let mut loss = 0.0;
    let mut grad = DVector::zeros(pred.len());
    let norm = (layout.agents * layout.stages) as f64;
    for i in 0..layout.agents {
        for t in 0..layout.stages {
            let (ix, iy) = (layout.x(i, t), layout.y(i, t));
            let (dx, dy) = (pred[ix] - truth[ix], pred[iy] - truth[iy]);
            let e = (dx * dx + dy * dy).sqrt();
            loss += e;
            if e > 1e-12 {
                grad[ix] = dx / (e * norm);
                grad[iy] = dy / (e * norm);
            }
        }
    }
    (loss / norm, grad)
}

/// Teacher-forced loss of one scene at given game parameters.
#[derive(Debug, Clone)]
pub struct SceneLoss {
    pub loss: f64,
    /// `∂loss/∂θ`, present when requested.
    pub grad_theta: Option<DVector<f64>>,
    pub method: Option<JacobianMethod>,
    pub argmax: JointAction,
}

/// Solves the labeled subspace at `theta` and compares it with `truth`.
#[allow(clippy::too_many_arguments)]
pub fn teacher_forced_loss(
    scenario: &DrivingScenario,
    label: usize,
    theta: &GameParams,
    truth: &JointAction,
    solve: &SolveOptions,
    warm: Option<&JointAction>,
    multi_active: MultiActivePolicy,
    with_grad: bool,
) -> Result<SceneLoss> {
    let game = scenario.game_on(label);
    let poly = SubspaceFamily::polytope(scenario, label);
    let mut opts = solve.clone();
    if let Some(w) = warm.filter(|w| poly.min_slack(w.as_slice()) > 1e-9) {
        opts.warm_start = Some(w.iter().copied().collect());
    }
    let report = maximize_on_polytope(game, theta, poly, &opts)?;
    if !report.converged() {
        return Err(GameError::MaxIter(report.iterations));
    }
    let (loss, g_a) = mae_loss(&report.argmax, truth, &scenario.layout());
    let (grad_theta, method) = if with_grad {
        let bopts = BackwardOptions { multi_active, exec: ExecMode::Sequential, ..BackwardOptions::default() };
        let jac = backward_one(game, theta, poly, &report, &opts, &bopts)?;
        if matches!(jac.method, JacobianMethod::Zero | JacobianMethod::FiniteDifference) {
            log::info!("subspace {label}: {:?} Jacobian", jac.method);
        }
        (Some(jac.matrix.transpose() * g_a), Some(jac.method))
    } else {
        (None, None)
    };
    Ok(SceneLoss { loss, grad_theta, method, argmax: report.argmax })
}

struct WarmState {
    hints: Vec<Option<JointAction>>,
    last: Vec<Option<JointAction>>,
}

impl WarmState {
    fn new(scenes: &[LabeledScene], exec: ExecMode) -> Self {
        let hints = par::map(exec, scenes, |s| {
            let poly = SubspaceFamily::polytope(&s.scenario, s.label);
            poly.hint.clone().map(DVector::from_vec).or_else(|| find_interior_point(poly).ok())
        });
        WarmState { last: vec![None; scenes.len()], hints }
    }

    fn start(&self, i: usize, pull: f64) -> Option<JointAction> {
        match (&self.last[i], &self.hints[i]) {
            (Some(a), Some(h)) => Some(a + (h - a) * pull),
            _ => None,
        }
    }
}

/// Phase two: fits the preference net and the distance weight by
/// teacher-forced MAE through the implicit layer. The refinement nets are
/// only read.
pub fn train_full(model: &mut TglModel, scenes: &[LabeledScene], cfg: &TrainConfig) -> Result<TrainLog> {
    if scenes.is_empty() {
        return Err(GameError::Data("no labeled scenes to train on".into()));
    }
    let mut log = TrainLog { label_counts: label_counts(scenes), ..TrainLog::default() };
    let (train, val) = split_indices(scenes.len(), cfg.full.validation_fraction, cfg.seed.wrapping_add(1));
    let front = scenes
        .iter()
        .map(|s| model.refine(&model.normalize(&s.raw_features)).map(|(r, _)| r.merger_in_front()))
        .collect::<Result<Vec<_>>>()?;
    let base = model.clone();
    let mut warm_solve = cfg.solve.clone();
    warm_solve.mu_init = cfg.warm_mu.max(cfg.solve.mu_final).min(cfg.solve.mu_init);
    let warm = std::cell::RefCell::new(WarmState::new(scenes, cfg.exec));

    let run = |p: &[f64], idx: &[usize], epoch: usize, with_grad: bool| -> Result<(f64, Vec<f64>, usize)> {
        let mut m = base.clone();
        m.set_phase_two_params(p)?;
        let starts: Vec<Option<JointAction>> = {
            let w = warm.borrow();
            idx.iter().map(|&i| w.start(i, cfg.warm_pull)).collect()
        };
        let jobs: Vec<(usize, Option<JointAction>)> = idx.iter().copied().zip(starts).collect();
        let out = par::map(cfg.exec, &jobs, |(i, start)| -> Result<(SceneLoss, Vec<f64>)> {
            let s = &scenes[*i];
            let mut rng = scene_rng(cfg.seed, epoch, *i);
            let rng = (m.config.pref_dropout > 0.0 && with_grad).then_some(&mut rng);
            let (theta, cache) = m.reveal(&m.normalize(&s.raw_features), &s.scenario.past, front[*i], rng)?;
            let opts = if start.is_some() { &warm_solve } else { &cfg.solve };
            let sl = teacher_forced_loss(&s.scenario, s.label, &theta, &s.future, opts, start.as_ref(), cfg.multi_active, with_grad)?;
            let grad = match &sl.grad_theta {
                Some(g) => {
                    let (mut gp, gd) = m.reveal_backward(&cache, g)?;
                    gp.push(gd);
                    gp
                }
                None => Vec::new(),
            };
            Ok((sl, grad))
        });
        let mut loss = 0.0;
        let mut grad = vec![0.0; if with_grad { p.len() } else { 0 }];
        let mut ok = 0usize;
        let mut w = warm.borrow_mut();
        for (&i, r) in idx.iter().zip(out) {
            match r {
                Ok((sl, g)) => {
                    loss += sl.loss;
                    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    w.last[i] = Some(sl.argmax);
                    ok += 1;
                }
                Err(e) => {
                    log::warn!("scene {} skipped this epoch: {e}", scenes[i].id);
                    w.last[i] = None;
                }
            }
        }
        if ok == 0 {
            return Err(GameError::AllSubspacesFailed("every training scene failed".into()));
        }
        grad.iter_mut().for_each(|g| *g /= ok as f64);
        Ok((loss / ok as f64, grad, idx.len() - ok))
    };
    let best = descend(
        2,
        model.phase_two_params(),
        &cfg.full,
        &mut log,
        |p, epoch| run(p, &train, epoch, true),
        |p| run(p, &val, 0, false).map(|r| r.0),
    )?;
    model.set_phase_two_params(&best)?;
    Ok(log)
}

/// Phase one then phase two.
pub fn train(model: &mut TglModel, scenes: &[Scene], cfg: &TrainConfig) -> Result<(TrainLog, TrainLog)> {
    let (labeled, dropped) = prepare_scenes(model, scenes, cfg.exec);
    let mut l1 = train_refinement(model, &labeled, cfg)?;
    l1.excluded = dropped.clone();
    let mut l2 = train_full(model, &labeled, cfg)?;
    l2.excluded = dropped;
    Ok((l1, l2))
}

/// k-fold cross-validation: a fresh model from `config` is trained on the
/// other folds and evaluated on each fold in turn.
pub fn cross_validate(
    scenes: &[Scene],
    config: &ModelConfig,
    driving: &DrivingConfig,
    cfg: &TrainConfig,
    folds: usize,
) -> Result<(EvalReport, Vec<(TrainLog, TrainLog)>)> {
    let assignment = fold_assignment(scenes.len(), folds, cfg.seed)?;
    let mut reports = Vec::new();
    let mut logs = Vec::new();
    for (f, test) in assignment.iter().enumerate() {
        let train_set: Vec<Scene> = (0..scenes.len()).filter(|i| !test.contains(i)).map(|i| scenes[i].clone()).collect();
        let test_set: Vec<Scene> = test.iter().map(|&i| scenes[i].clone()).collect();
        let seed = cfg.seed.wrapping_add(f as u64);
        let mut model = TglModel::new(config.clone(), driving.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?;
        let fold_cfg = TrainConfig { seed, ..cfg.clone() };
        logs.push(train(&mut model, &train_set, &fold_cfg)?);
        let report = evaluate(&model, &test_set, &cfg.solve, cfg.exec)?;
        log::info!("fold {f}: MAE {:.3} RMSE {:.3}", report.mae_avg, report.rmse_avg);
        reports.push(report);
    }
    Ok((aggregate_folds(reports)?, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_and_adam_descend_a_quadratic() {
        for kind in [OptimizerKind::Momentum, OptimizerKind::Adam, OptimizerKind::Lbfgs] {
            let cfg = OptimizerConfig { kind, lr: 0.05, ..OptimizerConfig::default() };
            let mut opt = Optimizer::new(cfg, 2);
            let mut x = vec![3.0, -2.0];
            for _ in 0..300 {
                let g = vec![2.0 * x[0], 8.0 * x[1]];
                opt.step(&mut x, &g);
            }
            assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2, "{kind:?}: {x:?}");
        }
    }

    #[test]
    fn refinement_gradient_matches_differences() {
        use crate::scenarios::DrivingConfig;
        let driving = DrivingConfig { horizon_steps: 10, ..DrivingConfig::default() };
        let config = super::super::model::ModelConfig { past_window: 2, dropout: 0.0, ..Default::default() };
        let mut model = TglModel::new(config, driving, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x: Vec<f64> = (0..model.order.input_dim()).map(|k| (k as f64 * 0.7).sin()).collect();
        let p0 = refinement_params(&model);
        let (_, g) = refinement_loss(&model, &x, 7, true, None, true).unwrap();
        for j in (0..p0.len()).step_by(17) {
            let mut eval = |d: f64| {
                let mut p = p0.clone();
                p[j] += d;
                set_refinement_params(&mut model, &p).unwrap();
                refinement_loss(&model, &x, 7, true, None, false).unwrap().0
            };
            let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-5 * (1.0 + fd.abs()), "param {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (t, v) = split_indices(20, 0.2, 3);
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split_indices(20, 0.2, 3), (t, v));
        let (t, v) = split_indices(3, 0.2, 3);
        assert_eq!(t, v);
    }

    #[test]
    fn mae_gradient_matches_differences() {
        let layout = DrivingLayout { agents: 2, stages: 3 };
        let truth = DVector::from_fn(12, |k, _| k as f64 * 0.3);
        let pred = DVector::from_fn(12, |k, _| (k as f64 * 1.7).sin());
        let (_, g) = mae_loss(&pred, &truth, &layout);
        for k in 0..12 {
            let mut p = pred.clone();
            p[k] += 1e-6;
            let mut q = pred.clone();
            q[k] -= 1e-6;
            let fd = (mae_loss(&p, &truth, &layout).0 - mae_loss(&q, &truth, &layout).0) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6);
        }
    }
}
