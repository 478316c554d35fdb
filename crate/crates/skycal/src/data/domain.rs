//! Parameter domains: named boxes the calibration parameters live in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A box [lower_1, upper_1] x ... x [lower_p, upper_p] with named axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterDomain {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::validation("parameter domain needs at least one axis"));
        }
        if names.len() != lower.len() || names.len() != upper.len() {
            return Err(Error::validation(format!(
                "domain arity mismatch: {} names, {} lower, {} upper",
                names.len(),
                lower.len(),
                upper.len()
            )));
        }
        for i in 0..names.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() || lower[i] >= upper[i] {
                return Err(Error::validation(format!(
                    "parameter '{}' has invalid bounds [{}, {}]",
                    names[i], lower[i], upper[i]
                )));
            }
        }
        Ok(ParameterDomain { names, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// True when `u` lies inside the box, boundary included.
    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    /// Maps raw coordinates to [0,1]^p.
    pub fn normalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, &v)| (v - self.lower[k]) / (self.upper[k] - self.lower[k]))
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, &v)| self.lower[k] + v * (self.upper[k] - self.lower[k]))
            .collect()
    }
}
