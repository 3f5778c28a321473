//! Output heads mapping raw net outputs to game parameters.

use serde::{Deserialize, Serialize};

/// `ln(1 + eᶻ)`.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn softplus_grad(z: f64) -> f64 {
    sigmoid(z)
}

/// Raw value whose softplus is `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquashRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for SquashRange {
    fn default() -> Self {
        SquashRange { lo: 0.6, hi: 1.4 }
    }
}

/// `θ^v = v_past · (lo + (hi − lo) σ(raw))` and its derivative in `raw`.
pub fn tgl_d_head(raw: f64, v_past: f64, range: SquashRange) -> (f64, f64) {
    let s = sigmoid(raw);
    let span = range.hi - range.lo;
    (v_past * (range.lo + span * s), v_past * span * s * (1.0 - s))
}

pub fn clamp(z: f64, lo: f64, hi: f64) -> f64 {
    lo.max(z.min(hi))
}

/// Clamped desired speeds plus, per agent, whether the value passed
/// through unclamped (derivative 1) or hit a bound (derivative 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped {
    pub values: [f64; 2],
    pub passthrough: [bool; 2],
}

/// Desired-speed clamping for the merge scene; index 0 is the highway
/// car, index 1 the merger.
pub fn tgl_dp_clamp(
    old: [f64; 2],
    desired: [f64; 2],
    merger_in_front: bool,
    big_change: f64,
    small_change: f64,
) -> Clamped {
    let [old_other, old_merger] = old;
    let [desired_other, desired_merger] = desired;
    let (merger_bounds, other_bounds) = if !merger_in_front {
        (
            (old_merger, old_merger * big_change),
            (old_other / small_change, old_other * small_change),
        )
    } else {
        let mb = ((old_merger * big_change).min(old_other / big_change), old_merger * big_change);
        let new_merger = clamp(desired_merger, mb.0, mb.1);
        let ob = if new_merger > old_other {
            (old_other / small_change, old_other * small_change)
        } else {
            (old_other / big_change, old_other)
        };
        (mb, ob)
    };
    let new_other = clamp(desired_other, other_bounds.0, other_bounds.1);
    let new_merger = clamp(desired_merger, merger_bounds.0, merger_bounds.1);
    let inside = |v: f64, b: (f64, f64)| v > b.0 && v < b.1;
    Clamped {
        values: [new_other, new_merger],
        passthrough: [inside(desired_other, other_bounds), inside(desired_merger, merger_bounds)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-3, 0.5, 1.0, 7.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * (1.0 + y));
        }
        assert!((softplus(softplus_inverse(1.0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tgl_d_head_midpoint_and_saturation() {
        let r = SquashRange::default();
        assert!((tgl_d_head(0.0, 20.0, r).0 - 20.0).abs() < 1e-12);
        assert!((tgl_d_head(50.0, 20.0, r).0 - 28.0).abs() < 1e-9);
    }

    #[test]
    fn highway_car_in_front_limits_changes() {
        let c = tgl_dp_clamp([20.0, 15.0], [40.0, 7.5], false, 1.2, 1.04);
        assert!((c.values[0] - 20.8).abs() < 1e-12);
        assert_eq!(c.values[1], 15.0);
        assert_eq!(c.passthrough, [false, false]);
    }

    #[test]
    fn merger_in_front_lower_bound() {
        let old = [20.0, 15.0];
        let c = tgl_dp_clamp(old, [20.0, 0.0], true, 1.2, 1.04);
        assert_eq!(c.values[1], (15.0f64 * 1.2).min(20.0 / 1.2));
        // new merger speed below the other's old speed: other may only slow down
        assert!(c.values[1] <= 20.0);
        let c = tgl_dp_clamp(old, [30.0, 0.0], true, 1.2, 1.04);
        assert_eq!(c.values[0], 20.0);
    }
}
