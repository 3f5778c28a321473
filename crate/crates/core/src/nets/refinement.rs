//! Equilibrium refinement and weighting over merge subspaces.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{GameError, Result};
use crate::scenarios::merge_subspace_index;

/// Mass added uniformly to every merge step so no cell has zero mass.
const STEP_FLOOR: f64 = 1e-9;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gaussian over merge steps, discretized by unit cells `[m − ½, m + ½]`
/// and truncated to steps `1..=T−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDistribution {
    pub mean: f64,
    pub std: f64,
    /// `probs[m − 1]` is the mass of merge step `m`.
    pub probs: Vec<f64>,
}

impl StepDistribution {
    /// Also returns `∂probs/∂mean` and `∂probs/∂ln std`.
    pub fn with_gradients(mean: f64, std: f64, final_step: usize) -> Result<(Self, Vec<[f64; 2]>)> {
        if final_step < 2 || !(std > 0.0) || !mean.is_finite() {
            return Err(GameError::InvalidParams(format!(
                "bad step distribution mean={mean} std={std} T={final_step}"
            )));
        }
        let steps = final_step - 1;
        // cell edges in standardized units, with Φ and its derivatives
        let edge = |e: f64| {
            let z = (e - mean) / std;
            let pdf = std_normal_pdf(z);
            // (z, Φ, 1 − Φ, ∂Φ/∂mean, ∂Φ/∂ln std)
            (z, std_normal_cdf(z), std_normal_cdf(-z), -pdf / std, -pdf * z)
        };
        let edges: Vec<(f64, f64, f64, f64, f64)> = (0..=steps).map(|k| edge(k as f64 + 0.5)).collect();
        let raw: Vec<[f64; 3]> = (0..steps)
            .map(|k| {
                let (a, b) = (edges[k], edges[k + 1]);
                // upper tail from the survival function to keep precision
                let mass = if a.0 > 0.0 { a.2 - b.2 } else { b.1 - a.1 };
                [mass, b.3 - a.3, b.4 - a.4]
            })
            .collect();
        let total: [f64; 3] = raw.iter().fold([0.0; 3], |acc, r| [acc[0] + r[0], acc[1] + r[1], acc[2] + r[2]]);
        let uniform = 1.0 / steps as f64;
        let mut probs = Vec::with_capacity(steps);
        let mut grads = Vec::with_capacity(steps);
        if total[0] < 1e-300 {
            probs = vec![uniform; steps];
            grads = vec![[0.0; 2]; steps];
        } else {
            for r in &raw {
                let p = r[0] / total[0];
                let dp = |j: usize| (r[j] * total[0] - r[0] * total[j]) / (total[0] * total[0]);
                probs.push((1.0 - STEP_FLOOR) * p + STEP_FLOOR * uniform);
                grads.push([(1.0 - STEP_FLOOR) * dp(1), (1.0 - STEP_FLOOR) * dp(2)]);
            }
        }
        Ok((StepDistribution { mean, std, probs }, grads))
    }

    pub fn new(mean: f64, std: f64, final_step: usize) -> Result<Self> {
        Ok(Self::with_gradients(mean, std, final_step)?.0)
    }

    /// Most probable merge step.
    pub fn mode(&self) -> usize {
        argmax(&self.probs) + 1
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementOutput {
    /// Selected subspace indices, most probable first.
    pub refined: Vec<usize>,
    /// `[highway-first, merger-first]`.
    pub order_probs: [f64; 2],
    pub steps: StepDistribution,
}

impl RefinementOutput {
    pub fn multi_hot(&self, num_subspaces: usize) -> Vec<bool> {
        let mut v = vec![false; num_subspaces];
        for &k in &self.refined {
            if k < num_subspaces {
                v[k] = true;
            }
        }
        v
    }

    pub fn merger_in_front(&self) -> bool {
        self.order_probs[1] > self.order_probs[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingOutput {
    /// Aligned with [`RefinementOutput::refined`].
    pub weights: Vec<f64>,
}

/// Keeps the `k̃` most probable (merge step, order) cells under
/// `P(order)·P(step)`, ties to the lower subspace index, and renormalizes
/// their masses into mode weights.
pub fn refinement_and_weighting(
    order_probs: [f64; 2],
    steps: StepDistribution,
    k_tilde: usize,
) -> Result<(RefinementOutput, WeightingOutput)> {
    if k_tilde == 0 {
        return Err(GameError::InvalidParams("k̃ must be positive".into()));
    }
    let mut cells: Vec<(usize, f64)> = Vec::with_capacity(2 * steps.probs.len());
    for (mi, &pm) in steps.probs.iter().enumerate() {
        for (order, &po) in order_probs.iter().enumerate() {
            cells.push((merge_subspace_index(mi + 1, order == 1), po * pm));
        }
    }
    cells.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cells.truncate(k_tilde);
    let total: f64 = cells.iter().map(|c| c.1).sum();
    let weights = if total > 0.0 {
        cells.iter().map(|c| c.1 / total).collect()
    } else {
        vec![1.0 / cells.len() as f64; cells.len()]
    };
    Ok((
        RefinementOutput { refined: cells.iter().map(|c| c.0).collect(), order_probs, steps },
        WeightingOutput { weights },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_masses_form_a_distribution() {
        let d = StepDistribution::new(5.3, 1.7, 10).unwrap();
        assert_eq!(d.probs.len(), 9);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.mode(), 5);
    }

    #[test]
    fn narrow_gaussian_concentrates_on_one_step() {
        let d = StepDistribution::new(3.0, 0.05, 10).unwrap();
        assert!(d.probs[2] > 1.0 - 1e-6);
    }

    #[test]
    fn gradients_match_differences() {
        let (mean, std, t) = (4.2, 1.3, 12);
        let (_, g) = StepDistribution::with_gradients(mean, std, t).unwrap();
        let h = 1e-6;
        let f = |m: f64, s: f64| StepDistribution::new(m, s, t).unwrap().probs;
        let (pm, mm) = (f(mean + h, std), f(mean - h, std));
        let (ps, ms) = (f(mean, std * h.exp()), f(mean, std * (-h).exp()));
        for k in 0..g.len() {
            assert!((g[k][0] - (pm[k] - mm[k]) / (2.0 * h)).abs() < 1e-7);
            assert!((g[k][1] - (ps[k] - ms[k]) / (2.0 * h)).abs() < 1e-7);
        }
    }

    #[test]
    fn uniform_inputs_pick_lowest_indices_with_uniform_weights() {
        let steps = StepDistribution { mean: 0.0, std: 1.0, probs: vec![0.25; 4] };
        let (r, w) = refinement_and_weighting([0.5, 0.5], steps, 3).unwrap();
        assert_eq!(r.refined, vec![0, 1, 2]);
        for x in &w.weights {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
