//! The trajectory game learner: preference revelation, refinement and
//! weighting nets around the driving game.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::GameParams;
use crate::nets::{
    refinement_and_weighting, softplus, softplus_grad, softplus_inverse, tgl_d_head, tgl_dp_clamp, Head, Mlp,
    MlpCache, RefinementOutput, SquashRange, StepDistribution, WeightingOutput,
};
use crate::scenarios::{DrivingConfig, DrivingLayout, PastTrajectory, RoadGeometry};

use super::features::{feature_dim, scene_features, FeatureScales};

pub const WEIGHTS_VERSION: u32 = 1;

/// Bounds of the merge-step log std. A unit floor keeps every cell mass
/// and its gradient representable across the horizon.
const LN_STD_RANGE: (f64, f64) = (0.0, 1.5);

/// Per-agent raw outputs of the preference net.
pub const COMPACT_PER_AGENT: usize = 6;
const V: usize = 0;
const VEL: usize = 1;
const CEN: usize = 2;
const VELW: usize = 3;
const ACC: usize = 4;
const END: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Tgl,
    TglD,
    TglDp,
}

/// Which stages carry the per-agent lane-center and velocity weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamPreset {
    /// Velocity weights on the last six stages, lane-center weight on the
    /// final stage only.
    Terminal,
    AllStages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Past steps fed to the nets.
    pub past_window: usize,
    /// Number of refined subspaces `k̃`.
    pub k_tilde: usize,
    pub pref_hidden: Vec<usize>,
    pub order_hidden: Vec<usize>,
    pub time_hidden: Vec<usize>,
    /// Dropout of the refinement nets.
    pub dropout: f64,
    pub pref_dropout: f64,
    pub squash: SquashRange,
    pub big_change: f64,
    pub small_change: f64,
    pub preset: ParamPreset,
    pub features: FeatureScales,
    /// Initial spread of the merge-step Gaussian, in steps.
    pub step_std_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::TglD,
            past_window: 15,
            k_tilde: 4,
            pref_hidden: vec![16, 24],
            order_hidden: vec![16, 4],
            time_hidden: vec![64, 32],
            dropout: 0.6,
            pref_dropout: 0.0,
            squash: SquashRange::default(),
            big_change: 1.2,
            small_change: 1.04,
            preset: ParamPreset::Terminal,
            features: FeatureScales::default(),
            step_std_init: 4.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.past_window < 2 || self.k_tilde == 0 {
            return Err(GameError::Config("past window must be ≥ 2 and k̃ ≥ 1".into()));
        }
        if !(self.squash.lo > 0.0 && self.squash.hi > self.squash.lo) {
            return Err(GameError::Config("squash range must satisfy 0 < lo < hi".into()));
        }
        if !(self.big_change >= 1.0 && self.small_change >= 1.0) {
            return Err(GameError::Config("clamp factors must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.pref_dropout) {
            return Err(GameError::Config("dropout outside [0, 1)".into()));
        }
        if !(self.step_std_init >= LN_STD_RANGE.0.exp() && self.step_std_init <= LN_STD_RANGE.1.exp()) {
            return Err(GameError::Config("step_std_init must lie in [1, e^1.5]".into()));
        }
        Ok(())
    }
}

/// Everything needed to backpropagate from `θ` into the preference net.
#[derive(Debug, Clone)]
pub struct RevealCache {
    pref: MlpCache,
    raw: DVector<f64>,
    /// `∂θ^v/∂raw` per agent, clamping included.
    v_slope: [f64; 2],
}

/// Raw refinement-net outputs for one scene.
#[derive(Debug, Clone)]
pub struct RefineCache {
    pub order: MlpCache,
    pub time: MlpCache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TglModel {
    pub version: u32,
    pub config: ModelConfig,
    pub driving: DrivingConfig,
    pub pref: Mlp,
    pub order: Mlp,
    pub time: Mlp,
    /// Softplus preimage of the shared distance weight.
    pub dist_raw: f64,
    /// Per-feature standardization; empty means identity.
    #[serde(default)]
    pub feature_norm: Vec<[f64; 2]>,
}

fn vel_stages(t: usize, preset: ParamPreset) -> std::ops::RangeInclusive<usize> {
    match preset {
        ParamPreset::Terminal => t.saturating_sub(5)..=t,
        ParamPreset::AllStages => 0..=t,
    }
}

fn cen_stages(t: usize, preset: ParamPreset) -> std::ops::RangeInclusive<usize> {
    match preset {
        ParamPreset::Terminal => t..=t,
        ParamPreset::AllStages => 0..=t,
    }
}

/// Two-agent driving parameters from per-agent compact values
/// `[v, vel, cen, velw, acc, end]`.
pub fn expand_compact(
    driving: &DrivingConfig,
    preset: ParamPreset,
    compact: &[[f64; COMPACT_PER_AGENT]; 2],
    dist: f64,
) -> GameParams {
    let l = driving.layout(2);
    let t_max = driving.horizon_steps;
    let mut th = DVector::zeros(l.num_params());
    th[l.dist()] = dist;
    for (i, c) in compact.iter().enumerate() {
        for t in vel_stages(t_max, preset) {
            th[l.vel(i, t)] = c[VEL];
        }
        for t in cen_stages(t_max, preset) {
            th[l.cen(i, t)] = c[CEN];
        }
        th[l.desired_velocity(i)] = c[V];
        th[l.velw(i)] = c[VELW];
        th[l.acc(i)] = c[ACC];
        th[l.end(i)] = c[END];
    }
    th
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl TglModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, driving: DrivingConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        driving.validate()?;
        let input = feature_dim(config.past_window, config.features.stride);
        let mut pref = Mlp::new(&sizes(input, &config.pref_hidden, 2 * COMPACT_PER_AGENT), Head::Linear, config.pref_dropout, rng)?;
        // Start from the prior: θ^v at the last velocity, every weight 1.
        let last = pref.layers.len() - 1;
        pref.layers[last].weights.fill(0.0);
        for i in 0..2 {
            for j in 0..COMPACT_PER_AGENT {
                pref.layers[last].bias[i * COMPACT_PER_AGENT + j] = if j == V {
                    match config.variant {
                        Variant::Tgl => 0.0,
                        Variant::TglD | Variant::TglDp => {
                            // σ(raw) hitting the relative speed 1
                            let s = (1.0 - config.squash.lo) / (config.squash.hi - config.squash.lo);
                            (s / (1.0 - s)).ln()
                        }
                    }
                } else {
                    softplus_inverse(1.0)
                };
            }
        }
        let order = Mlp::new(&sizes(input, &config.order_hidden, 2), Head::Softmax, config.dropout, rng)?;
        let time = Mlp::new(&sizes(input, &config.time_hidden, 2), Head::Linear, config.dropout, rng)?;
        Ok(TglModel {
            version: WEIGHTS_VERSION,
            config,
            driving,
            pref,
            order,
            time,
            dist_raw: softplus_inverse(1.0),
            feature_norm: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != WEIGHTS_VERSION {
            return Err(GameError::Config(format!("unsupported weights version {}", self.version)));
        }
        self.config.validate()?;
        self.driving.validate()?;
        let input = feature_dim(self.config.past_window, self.config.features.stride);
        for (net, out) in [(&self.pref, 2 * COMPACT_PER_AGENT), (&self.order, 2), (&self.time, 2)] {
            net.validate()?;
            if net.input_dim() != input || net.output_dim() != out {
                return Err(GameError::Shape("net shape does not match the model config".into()));
            }
        }
        if !self.feature_norm.is_empty()
            && (self.feature_norm.len() != input || self.feature_norm.iter().any(|[_, s]| !(*s > 0.0)))
        {
            return Err(GameError::Shape("feature normalization does not match the input".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> DrivingLayout {
        self.driving.layout(2)
    }

    pub fn dist_weight(&self) -> f64 {
        softplus(self.dist_raw)
    }

    /// Scaled but unstandardized features.
    pub fn raw_features(&self, past: &PastTrajectory, geometry: &RoadGeometry) -> Result<Vec<f64>> {
        scene_features(past, geometry, self.config.past_window, self.driving.dt, &self.config.features)
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        if self.feature_norm.is_empty() {
            return raw.to_vec();
        }
        raw.iter().zip(&self.feature_norm).map(|(x, [m, s])| (x - m) / s).collect()
    }

    /// Net input for a scene.
    pub fn features(&self, past: &PastTrajectory, geometry: &RoadGeometry) -> Result<Vec<f64>> {
        Ok(self.normalize(&self.raw_features(past, geometry)?))
    }

    /// Standardizes each feature to zero mean and unit variance over `raw`.
    /// Constant features keep unit scale.
    pub fn fit_feature_norm(&mut self, raw: &[Vec<f64>]) -> Result<()> {
        let dim = feature_dim(self.config.past_window, self.config.features.stride);
        if raw.is_empty() || raw.iter().any(|r| r.len() != dim) {
            return Err(GameError::Shape("cannot fit normalization".into()));
        }
        let n = raw.len() as f64;
        self.feature_norm = (0..dim)
            .map(|j| {
                let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                [mean, if sd > 1e-6 { sd } else { 1.0 }]
            })
            .collect();
        Ok(())
    }

    fn step_center_scale(&self) -> (f64, f64) {
        let t = self.driving.horizon_steps as f64;
        (0.5 * t, 0.25 * t)
    }

    /// `(mean, ln std)` of the merge-step Gaussian from raw time-net output.
    pub fn step_params(&self, raw: &DVector<f64>) -> (f64, f64) {
        let (c, s) = self.step_center_scale();
        let ln_std = (self.config.step_std_init.ln() + raw[1]).clamp(LN_STD_RANGE.0, LN_STD_RANGE.1);
        ((c + s * raw[0]).clamp(0.0, 2.0 * c), ln_std)
    }

    /// `∂(mean, ln std)/∂raw` as diagonal entries.
    pub fn step_param_slopes(&self, raw: &DVector<f64>) -> [f64; 2] {
        let (c, s) = self.step_center_scale();
        let mean = c + s * raw[0];
        let ln_std = self.config.step_std_init.ln() + raw[1];
        [if (0.0..=2.0 * c).contains(&mean) { s } else { 0.0 }, if (LN_STD_RANGE.0..=LN_STD_RANGE.1).contains(&ln_std) { 1.0 } else { 0.0 }]
    }

    pub fn refine_cached<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        mut rng: Option<&mut R>,
    ) -> Result<(RefinementOutput, WeightingOutput, RefineCache)> {
        let order = self.order.forward_cached(features, rng.as_deref_mut())?;
        let time = self.time.forward_cached(features, rng)?;
        let (mean, ln_std) = self.step_params(time.output());
        let steps = StepDistribution::new(mean, ln_std.exp(), self.driving.horizon_steps)?;
        let op = order.output();
        let (r, w) = refinement_and_weighting([op[0], op[1]], steps, self.config.k_tilde)?;
        Ok((r, w, RefineCache { order, time }))
    }

    /// Eval-mode refinement and weighting.
    pub fn refine(&self, features: &[f64]) -> Result<(RefinementOutput, WeightingOutput)> {
        let (r, w, _) = self.refine_cached::<rand::rngs::ThreadRng>(features, None)?;
        Ok((r, w))
    }

    fn last_speed(past: &PastTrajectory, i: usize, dt: f64) -> Result<f64> {
        Ok(past.last_velocity(i, dt)?[0].max(0.1))
    }

    /// Game parameters for one scene. `merger_in_front` feeds the clamping
    /// variant and is ignored otherwise.
    pub fn reveal<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        past: &PastTrajectory,
        merger_in_front: bool,
        rng: Option<&mut R>,
    ) -> Result<(GameParams, RevealCache)> {
        let pref = self.pref.forward_cached(features, rng)?;
        let raw = pref.output().clone();
        let dt = self.driving.dt;
        let v_last = [Self::last_speed(past, 0, dt)?, Self::last_speed(past, 1, dt)?];
        let mut v = [0.0; 2];
        let mut v_slope = [0.0; 2];
        for i in 0..2 {
            let r = raw[i * COMPACT_PER_AGENT + V];
            (v[i], v_slope[i]) = match self.config.variant {
                Variant::Tgl => (v_last[i] + r, 1.0),
                Variant::TglD | Variant::TglDp => tgl_d_head(r, v_last[i], self.config.squash),
            };
        }
        if self.config.variant == Variant::TglDp {
            let c = tgl_dp_clamp(v_last, v, merger_in_front, self.config.big_change, self.config.small_change);
            for i in 0..2 {
                v[i] = c.values[i];
                if !c.passthrough[i] {
                    v_slope[i] = 0.0;
                }
            }
        }
        let mut compact = [[0.0; COMPACT_PER_AGENT]; 2];
        for i in 0..2 {
            for j in 0..COMPACT_PER_AGENT {
                compact[i][j] = if j == V { v[i] } else { softplus(raw[i * COMPACT_PER_AGENT + j]) };
            }
        }
        let theta = self.expand(&compact, self.dist_weight());
        Ok((theta, RevealCache { pref, raw, v_slope }))
    }

    fn vel_stages(&self) -> std::ops::RangeInclusive<usize> {
        vel_stages(self.driving.horizon_steps, self.config.preset)
    }

    fn cen_stages(&self) -> std::ops::RangeInclusive<usize> {
        cen_stages(self.driving.horizon_steps, self.config.preset)
    }

    /// Full parameter vector from per-agent compact values.
    pub fn expand(&self, compact: &[[f64; COMPACT_PER_AGENT]; 2], dist: f64) -> GameParams {
        expand_compact(&self.driving, self.config.preset, compact, dist)
    }

    /// Gradient of a loss with `∂L/∂θ = grad_theta` with respect to the
    /// preference-net weights and the distance preimage.
    pub fn reveal_backward(&self, cache: &RevealCache, grad_theta: &DVector<f64>) -> Result<(Vec<f64>, f64)> {
        let l = self.layout();
        if grad_theta.len() != l.num_params() {
            return Err(GameError::Dimension { expected: l.num_params(), got: grad_theta.len() });
        }
        let mut g_raw = DVector::zeros(2 * COMPACT_PER_AGENT);
        for i in 0..2 {
            let base = i * COMPACT_PER_AGENT;
            let vel: f64 = self.vel_stages().map(|t| grad_theta[l.vel(i, t)]).sum();
            let cen: f64 = self.cen_stages().map(|t| grad_theta[l.cen(i, t)]).sum();
            g_raw[base + V] = grad_theta[l.desired_velocity(i)] * cache.v_slope[i];
            for (j, g) in [(VEL, vel), (CEN, cen), (VELW, grad_theta[l.velw(i)]), (ACC, grad_theta[l.acc(i)]), (END, grad_theta[l.end(i)])] {
                g_raw[base + j] = g * softplus_grad(cache.raw[base + j]);
            }
        }
        let (flat, _) = self.pref.backward(&cache.pref, &g_raw)?;
        Ok((flat, grad_theta[l.dist()] * softplus_grad(self.dist_raw)))
    }

    /// Trainable phase-two parameters: preference net then distance preimage.
    pub fn phase_two_params(&self) -> Vec<f64> {
        let mut p = self.pref.params();
        p.push(self.dist_raw);
        p
    }

    pub fn set_phase_two_params(&mut self, p: &[f64]) -> Result<()> {
        let n = self.pref.num_params();
        if p.len() != n + 1 {
            return Err(GameError::Dimension { expected: n + 1, got: p.len() });
        }
        self.pref.set_params(&p[..n])?;
        self.dist_raw = p[n];
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TglModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn past() -> PastTrajectory {
        PastTrajectory {
            agents: vec![vec![[96.0, 0.0], [100.0, 0.0]], vec![[92.0, -3.5], [96.0, -3.4]]],
        }
    }

    #[test]
    fn fresh_model_starts_at_the_prior() {
        for variant in [Variant::Tgl, Variant::TglD, Variant::TglDp] {
            let cfg = ModelConfig { variant, ..Default::default() };
            let drv = DrivingConfig { horizon_steps: 10, ..Default::default() };
            let m = TglModel::new(cfg, drv, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let f = m.features(&past(), &RoadGeometry::default()).unwrap();
            let (th, _) = m.reveal::<ChaCha8Rng>(&f, &past(), false, None).unwrap();
            let l = m.layout();
            assert!((th[l.desired_velocity(0)] - 20.0).abs() < 1e-9, "{variant:?}");
            assert!((th[l.desired_velocity(1)] - 20.0).abs() < 1e-9);
            assert!((th[l.acc(1)] - 1.0).abs() < 1e-12);
            assert!((th[l.vel(0, 10)] - 1.0).abs() < 1e-12);
            assert_eq!(th[l.vel(0, 4)], 0.0);
            assert_eq!(th[l.cen(1, 9)], 0.0);
            assert!((th[l.dist()] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_json_round_trips() {
        let m = TglModel::new(ModelConfig::default(), DrivingConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let back = TglModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
