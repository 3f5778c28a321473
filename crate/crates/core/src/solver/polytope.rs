use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// What a constraint encodes. Subspace-splitting kinds separate
/// equilibria; the rest describe the ambient action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Bound,
    Monotone,
    LaneBand,
    Ordering,
    Faster,
    Arrival,
    Other,
}

impl ConstraintKind {
    pub fn splits_subspaces(self) -> bool {
        matches!(
            self,
            ConstraintKind::LaneBand
                | ConstraintKind::Ordering
                | ConstraintKind::Faster
                | ConstraintKind::Arrival
        )
    }
}

/// `Σ coef·a[idx] ≤ bound`, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub bound: f64,
    pub kind: ConstraintKind,
}

impl LinearConstraint {
    pub fn dot(&self, a: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, c)| c * a[j]).sum()
    }

    pub fn slack(&self, a: &[f64]) -> f64 {
        self.bound - self.dot(a)
    }

    /// The dense normal `G_m`.
    pub fn normal(&self, dim: usize) -> DVector<f64> {
        let mut g = DVector::zeros(dim);
        for &(j, c) in &self.terms {
            g[j] += c;
        }
        g
    }

    fn simple_bound(&self) -> Option<(usize, f64)> {
        match self.terms.as_slice() {
            [(j, c)] => Some((*j, *c)),
            _ => None,
        }
    }
}

/// Intersection of linear inequalities `G_mᵀ a ≤ b_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    dim: usize,
    constraints: Vec<LinearConstraint>,
    pub label: usize,
    pub description: String,
    /// Optional analytic interior point supplied by the scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<Vec<f64>>,
}

impl Polytope {
    pub fn new(
        dim: usize,
        constraints: Vec<LinearConstraint>,
        label: usize,
        description: impl Into<String>,
    ) -> Result<Self> {
        for (m, c) in constraints.iter().enumerate() {
            if !c.bound.is_finite() {
                return Err(GameError::InvalidParams(format!(
                    "constraint {m} has bound {}",
                    c.bound
                )));
            }
            if c.terms.is_empty() || c.terms.iter().all(|&(_, v)| v == 0.0) {
                return Err(GameError::InvalidParams(format!(
                    "constraint {m} has a zero normal"
                )));
            }
            if let Some(&(j, v)) = c.terms.iter().find(|&&(j, v)| j >= dim || !v.is_finite()) {
                return Err(GameError::InvalidParams(format!(
                    "constraint {m} has bad term ({j}, {v}) for dimension {dim}"
                )));
            }
        }
        let poly = Polytope {
            dim,
            constraints,
            label,
            description: description.into(),
            hint: None,
        };
        poly.check_bounded()?;
        Ok(poly)
    }

    pub fn builder(dim: usize) -> PolytopeBuilder {
        PolytopeBuilder {
            dim,
            constraints: Vec::new(),
        }
    }

    pub fn with_hint(mut self, hint: Vec<f64>) -> Self {
        self.hint = Some(hint);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn slacks(&self, a: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|c| c.slack(a)).collect()
    }

    pub fn min_slack(&self, a: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.slack(a))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        self.constraints.iter().all(|c| c.slack(a) >= -tol)
    }

    /// Sum of constraint violations `Σ max(0, −slack)`.
    pub fn total_violation(&self, a: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| (-c.slack(a)).max(0.0))
            .sum()
    }

    /// Per-coordinate interval implied by single-variable constraints.
    pub fn coordinate_bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); self.dim];
        for c in &self.constraints {
            if let Some((j, v)) = c.simple_bound() {
                let edge = c.bound / v;
                if v > 0.0 {
                    b[j].1 = b[j].1.min(edge);
                } else {
                    b[j].0 = b[j].0.max(edge);
                }
            }
        }
        b
    }

    pub fn is_box(&self) -> bool {
        self.constraints.iter().all(|c| c.simple_bound().is_some())
    }

    fn check_bounded(&self) -> Result<()> {
        for (j, (lo, hi)) in self.coordinate_bounds().into_iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(GameError::Unbounded(format!(
                    "coordinate {j} lacks a finite lower and upper bound"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PolytopeBuilder {
    dim: usize,
    constraints: Vec<LinearConstraint>,
}

impl PolytopeBuilder {
    /// `Σ terms ≤ bound`.
    pub fn le(mut self, terms: Vec<(usize, f64)>, bound: f64, kind: ConstraintKind) -> Self {
        self.constraints
            .push(LinearConstraint { terms, bound, kind });
        self
    }

    /// `Σ terms ≥ bound`, stored as `−Σ terms ≤ −bound`.
    pub fn ge(self, terms: Vec<(usize, f64)>, bound: f64, kind: ConstraintKind) -> Self {
        let neg = terms.into_iter().map(|(j, c)| (j, -c)).collect();
        self.le(neg, -bound, kind)
    }

    pub fn bounds(self, j: usize, lo: f64, hi: f64) -> Self {
        self.ge(vec![(j, 1.0)], lo, ConstraintKind::Bound).le(
            vec![(j, 1.0)],
            hi,
            ConstraintKind::Bound,
        )
    }

    pub fn push(&mut self, c: LinearConstraint) {
        self.constraints.push(c);
    }

    pub fn build(self, label: usize, description: impl Into<String>) -> Result<Polytope> {
        Polytope::new(self.dim, self.constraints, label, description)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_bounds_and_slacks() {
        let p = Polytope::builder(2)
            .bounds(0, 0.0, 1.0)
            .bounds(1, -1.0, 2.0)
            .build(0, "box")
            .unwrap();
        assert!(p.is_box());
        assert_eq!(p.coordinate_bounds(), vec![(0.0, 1.0), (-1.0, 2.0)]);
        assert_eq!(p.min_slack(&[0.5, 0.5]), 0.5);
        assert!(p.contains(&[1.0, 2.0], 0.0));
        assert!(!p.contains(&[1.1, 2.0], 1e-9));
        assert!((p.total_violation(&[1.5, -2.0]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_unbounded_and_zero_rows() {
        let err = Polytope::builder(2)
            .bounds(0, 0.0, 1.0)
            .build(0, "")
            .unwrap_err();
        assert!(matches!(err, GameError::Unbounded(_)));
        let err = Polytope::builder(1)
            .bounds(0, 0.0, 1.0)
            .le(vec![(0, 0.0)], 1.0, ConstraintKind::Other)
            .build(0, "")
            .unwrap_err();
        assert!(matches!(err, GameError::InvalidParams(_)));
    }

    #[test]
    fn ge_flips_sign() {
        let p = Polytope::builder(2)
            .bounds(0, -5.0, 5.0)
            .bounds(1, -5.0, 5.0)
            .ge(vec![(0, 1.0), (1, -1.0)], 0.5, ConstraintKind::Faster)
            .build(3, "a0 faster")
            .unwrap();
        let c = &p.constraints()[4];
        assert_eq!(c.normal(2).as_slice(), &[-1.0, 1.0]);
        assert!((c.slack(&[1.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!(c.kind.splits_subspaces());
    }
}
