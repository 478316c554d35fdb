//! The stacked training design: every (run, grid point) pair flattened into
//! one row of normalized GP inputs with its rate response.

use serde::{Deserialize, Serialize};

use crate::data::domain::ParameterDomain;
use crate::linalg::RowMatrix;

/// Per-column affine maps taking raw inputs to [0,1]: column k maps
/// `lo[k] -> 0` and `hi[k] -> 1`. Columns 0..3 are unit-vector coordinates
/// (raw range [-1,1]); the rest are parameters with their domain bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Normalization {
    /// Maps for 3 spatial columns plus the domain's parameter columns.
    pub fn for_domain(domain: &ParameterDomain) -> Self {
        let mut lo = vec![-1.0; 3];
        let mut hi = vec![1.0; 3];
        lo.extend_from_slice(domain.lower());
        hi.extend_from_slice(domain.upper());
        Normalization { lo, hi }
    }

    /// Identity maps for inputs that are already in [0,1] (raw matrices fed
    /// straight to the surrogate in tests and timing sweeps).
    pub fn identity(dim: usize) -> Self {
        Normalization {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    /// Normalizes a single column's value.
    pub fn apply_column(&self, k: usize, v: f64) -> f64 {
        (v - self.lo[k]) / (self.hi[k] - self.lo[k])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// The raw (lo, hi) column bounds backing the maps.
    pub(crate) fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    /// Normalizes one raw row into `out` (both of length `dim()`).
    pub fn apply(&self, raw: &[f64], out: &mut [f64]) {
        for k in 0..self.lo.len() {
            out[k] = (raw[k] - self.lo[k]) / (self.hi[k] - self.lo[k]);
        }
    }

    pub fn apply_vec(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(raw, &mut out);
        out
    }

    /// Inverse map, normalized to raw.
    pub fn invert(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .enumerate()
            .map(|(k, &z)| self.lo[k] + z * (self.hi[k] - self.lo[k]))
            .collect()
    }
}

/// Normalized training stack for the surrogate. Row `i * n_grid + j` holds
/// grid point j of run i (runs outer, grid inner); inputs are stored already
/// normalized, i.e. `normalization.apply(raw) == inputs.row(..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDesign {
    inputs: RowMatrix,
    responses: Vec<f64>,
    normalization: Normalization,
    n_runs: usize,
    n_grid: usize,
}

impl StackedDesign {
    pub fn new(
        inputs: RowMatrix,
        responses: Vec<f64>,
        normalization: Normalization,
        n_runs: usize,
        n_grid: usize,
    ) -> Self {
        assert_eq!(inputs.n_rows(), responses.len(), "stack shape mismatch");
        assert_eq!(inputs.n_rows(), n_runs * n_grid, "stack row count mismatch");
        assert_eq!(inputs.n_cols(), normalization.dim(), "stack width mismatch");
        StackedDesign {
            inputs,
            responses,
            normalization,
            n_runs,
            n_grid,
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.n_cols()
    }

    pub fn inputs(&self) -> &RowMatrix {
        &self.inputs
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    /// Wraps an arbitrary input matrix (assumed already in modeling units)
    /// as a degenerate stack of single-point runs with identity
    /// normalization.
    pub fn from_raw(inputs: RowMatrix, responses: Vec<f64>) -> Self {
        let n = inputs.n_rows();
        let d = inputs.n_cols();
        StackedDesign::new(inputs, responses, Normalization::identity(d), n, 1)
    }
}
