use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]` used as a feasible region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Output of [`BoxDomain::project`].
///
/// `correction` is the displacement `point - input`; it is the realized
/// `beta_k * Z_k` of the projected recursion and is zero exactly when the
/// input was already feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub point: Vec<f64>,
    pub correction: Vec<f64>,
}

impl ProjectionResult {
    pub fn is_active(&self) -> bool {
        self.correction.iter().any(|c| *c != 0.0)
    }
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Contract(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.is_empty() {
            return Err(Error::Contract("box must have at least one dimension".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::Contract(format!("box component {i}: [{l}, {u}] is not a valid interval")));
            }
        }
        Ok(BoxDomain { lower, upper })
    }

    /// One-dimensional interval.
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn has_interior(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| l < u)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *l <= *x && *x <= *u)
    }

    /// Euclidean projection onto the box (componentwise clamp).
    pub fn project(&self, point: &[f64]) -> Result<ProjectionResult> {
        self.check_dim(point)?;
        let mut out = point.to_vec();
        let correction = self.project_in_place(&mut out);
        Ok(ProjectionResult { point: out, correction })
    }

    /// Clamps `point` in place and returns the correction.
    pub fn project_in_place(&self, point: &mut [f64]) -> Vec<f64> {
        point
            .iter_mut()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, u))| {
                let before = *x;
                *x = x.clamp(*l, *u);
                *x - before
            })
            .collect()
    }

    pub(crate) fn check_dim(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::Contract(format!(
                "point has dimension {} but box has dimension {}",
                point.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}
