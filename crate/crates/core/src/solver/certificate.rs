use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::polytope::Polytope;
use crate::error::Result;
use crate::game::{GameParams, JointAction, PotentialGame};

/// Improvement threshold below which a point counts as a local NE.
pub const LOCAL_NE_TOL: f64 = 1e-8;

/// Largest unilateral improvement found by random local deviations.
///
/// For every agent, `trials` deviations are drawn uniformly from the ball
/// of the given radius in that agent's coordinates. A deviation leaving the
/// polytope is retracted along its ray to the boundary, so every sample is
/// feasible. Returns `max u_i(deviated) − u_i(a)`; the point passes as a
/// local NE when this is at most [`LOCAL_NE_TOL`].
pub fn verify_local_ne<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    a: &JointAction,
    poly: &Polytope,
    radius: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
    let mut worst = f64::NEG_INFINITY;
    for i in 0..game.num_agents() {
        let range = game.agent_range(i);
        let d = range.len();
        let base = game.utility(i, theta, a)?;
        for _ in 0..trials {
            let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            let r = radius * unit.sample(&mut rng).powf(1.0 / d as f64);
            dir.iter_mut().for_each(|v| *v *= r / norm);

            // Feasible fraction of the ray a → a + dir.
            let mut t = 1.0f64;
            for c in poly.constraints() {
                let gd: f64 = c
                    .terms
                    .iter()
                    .filter(|(j, _)| range.contains(j))
                    .map(|&(j, cj)| cj * dir[j - range.start])
                    .sum();
                if gd > 0.0 {
                    let s = c.slack(a.as_slice()).max(0.0);
                    t = t.min(s / gd);
                }
            }
            let mut cand = a.clone();
            for (k, v) in dir.iter().enumerate() {
                cand[range.start + k] += t * v;
            }
            let u = game.utility(i, theta, &cand)?;
            worst = worst.max(u - base);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::QuadraticGame;
    use crate::solver::{maximize_on_polytope, SolveOptions};
    use nalgebra::DVector;

    #[test]
    fn quadratic_optimum_passes_and_perturbed_point_fails() {
        let g = QuadraticGame::scalar();
        let th = DVector::from_element(1, 0.25);
        let p = Polytope::builder(1)
            .bounds(0, -1.0, 1.0)
            .build(0, "")
            .unwrap();
        let r = maximize_on_polytope(&g, &th, &p, &SolveOptions::default()).unwrap();
        let w = verify_local_ne(&g, &th, &r.argmax, &p, 1e-3, 200, 7).unwrap();
        assert!(w <= 0.0, "{w}");
        let off = DVector::from_element(1, r.argmax[0] + 0.1);
        let w = verify_local_ne(&g, &th, &off, &p, 1e-3, 200, 7).unwrap();
        assert!(w > 0.0);
    }
}
