//! Separable Matérn 5/2 covariance kernel.
//!
//! k(x, x') = τ² · ∏_k ρ(|x_k − x'_k| / θ_k) with the Matérn 5/2 correlation
//! ρ(r) = (1 + √5 r + 5r²/3) · exp(−√5 r). The nugget is *not* part of
//! `eval`; it enters only on the diagonal of a Gram matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ColMat, RowMatrix};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Matérn 5/2 correlation at scaled distance `r >= 0`.
#[inline]
pub fn matern52(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
}

/// Hyperparameters of the separable Matérn 5/2 kernel: one lengthscale per
/// input column, a variance scale, and a diagonal nugget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub theta: Vec<f64>,
    pub tau2: f64,
    pub nugget: f64,
}

impl KernelSpec {
    pub fn new(theta: Vec<f64>, tau2: f64, nugget: f64) -> Result<Self> {
        let spec = KernelSpec { theta, tau2, nugget };
        spec.validate()?;
        Ok(spec)
    }

    /// Unit lengthscales and variance, zero nugget — the conventional
    /// optimizer starting point on normalized inputs.
    pub fn unit(dim: usize) -> Self {
        KernelSpec {
            theta: vec![1.0; dim],
            tau2: 1.0,
            nugget: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.is_empty() {
            return Err(Error::validation("kernel needs at least one lengthscale"));
        }
        for (k, &t) in self.theta.iter().enumerate() {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::validation(format!(
                    "lengthscale theta[{k}] = {t} must be positive and finite"
                )));
            }
        }
        if !self.tau2.is_finite() || self.tau2 <= 0.0 {
            return Err(Error::validation(format!(
                "scale tau2 = {} must be positive and finite",
                self.tau2
            )));
        }
        if !self.nugget.is_finite() || self.nugget < 0.0 {
            return Err(Error::validation(format!(
                "nugget = {} must be nonnegative and finite",
                self.nugget
            )));
        }
        Ok(())
    }

    /// Kernel value between two points; nugget excluded.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.theta.len());
        debug_assert_eq!(y.len(), self.theta.len());
        let mut prod = self.tau2;
        for k in 0..self.theta.len() {
            prod *= matern52((x[k] - y[k]).abs() / self.theta[k]);
        }
        prod
    }

    /// Dense Gram matrix K(X, X) with `nugget + extra_diag` on the diagonal.
    pub fn gram(&self, inputs: &RowMatrix, extra_diag: f64) -> ColMat {
        let n = inputs.n_rows();
        let mut g = ColMat::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.eval(inputs.row(i), inputs.row(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
            let jj = g.get(j, j) + self.nugget + extra_diag;
            g.set(j, j, jj);
        }
        g
    }

    /// Cross-covariance K(A, B) (no diagonal terms).
    pub fn cross(&self, a: &RowMatrix, b: &RowMatrix) -> ColMat {
        ColMat::from_fn(a.n_rows(), b.n_rows(), |i, j| self.eval(a.row(i), b.row(j)))
    }

    /// Scaled squared distance Σ_k ((x_k − y_k)/θ_k)² — the metric the
    /// separable kernel induces, used for neighbor search.
    #[inline]
    pub fn scaled_dist2(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.theta.len() {
            let d = (x[k] - y[k]) / self.theta[k];
            s += d * d;
        }
        s
    }

    /// Serializes to the `{"theta": [...], "tau2": ..., "nugget": ...}` form
    /// at full precision.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("kernel spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: KernelSpec = serde_json::from_str(text)
            .map_err(|e| Error::validation(format!("bad kernel spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn correlation_closed_form_value() {
        // (1 + sqrt5 + 5/3) * exp(-sqrt5)
        assert_relative_eq!(matern52(1.0), 0.52399411, epsilon = 1e-8);
        assert_eq!(matern52(0.0), 1.0);
    }

    #[test]
    fn zero_distance_gives_tau2() {
        let k = KernelSpec::new(vec![0.3, 2.0], 1.7, 0.1).unwrap();
        let x = [0.4, 0.9];
        assert_eq!(k.eval(&x, &x), 1.7); // nugget excluded
    }

    #[test]
    fn decays_to_zero() {
        let k = KernelSpec::new(vec![1.0], 1.0, 0.0).unwrap();
        assert!(k.eval(&[0.0], &[60.0]) < 1e-50);
    }

    #[test]
    fn symmetric_and_monotone() {
        let k = KernelSpec::new(vec![0.5, 1.5, 0.9], 2.0, 0.0).unwrap();
        let a = [0.1, 0.2, 0.3];
        let b = [0.9, 0.4, 0.1];
        assert_eq!(k.eval(&a, &b), k.eval(&b, &a));
        // Increasing any coordinate distance decreases the value.
        let c = [1.2, 0.4, 0.1];
        assert!(k.eval(&a, &c) < k.eval(&a, &b));
    }

    #[test]
    fn permutation_invariance() {
        let k = KernelSpec::new(vec![0.5, 1.5], 2.0, 0.0).unwrap();
        let kp = KernelSpec::new(vec![1.5, 0.5], 2.0, 0.0).unwrap();
        assert_eq!(k.eval(&[0.1, 0.9], &[0.3, 0.2]), kp.eval(&[0.9, 0.1], &[0.2, 0.3]));
    }

    #[test]
    fn gram_has_nugget_on_diagonal_only() {
        let k = KernelSpec::new(vec![1.0], 2.0, 0.25).unwrap();
        let x = RowMatrix::from_rows(&[vec![0.0], vec![1.0]]);
        let g = k.gram(&x, 0.0);
        assert_eq!(g.get(0, 0), 2.25);
        assert_eq!(g.get(1, 1), 2.25);
        assert_relative_eq!(g.get(0, 1), 2.0 * matern52(1.0), epsilon = 1e-15);
        assert_eq!(g.get(0, 1), g.get(1, 0));
    }

    #[test]
    fn json_round_trip_full_precision() {
        let k = KernelSpec::new(vec![0.123456789012345678, 2.0 / 3.0], 1e-7, 0.1 + 1e-15).unwrap();
        let j = k.to_json();
        assert!(j.contains("theta") && j.contains("tau2") && j.contains("nugget"));
        let k2 = KernelSpec::from_json(&j).unwrap();
        assert_eq!(k, k2);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::new(vec![], 1.0, 0.0).is_err());
        assert!(KernelSpec::new(vec![0.0], 1.0, 0.0).is_err());
        assert!(KernelSpec::new(vec![1.0], 0.0, 0.0).is_err());
        assert!(KernelSpec::new(vec![1.0], 1.0, -0.1).is_err());
    }
}
