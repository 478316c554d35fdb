//! A small fully-synthetic calibration problem: a closed-form positive
//! mean surface over a one-dimensional sky (half of a great circle), two
//! calibration parameters on the unit square, and builders for simulator
//! corpora on grid or Latin-hypercube designs.
//!
//! The mean function is an invented stand-in, not a physical model: it is
//! smooth in `(u, x)`, bounded below by 1 (so every Poisson mean is
//! valid), and moves enough with both parameters that calibration is
//! informative at desk-scale exposures.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ParameterDomain, SimulatorCorpus, SpatialLocation};
use crate::error::{Error, Result};
use crate::linalg::RowMatrix;
use crate::rng::{stream_rng, Stream};

use super::synth::{synth_from_rates, SyntheticField};
use super::Schedule;

/// The toy calibration problem: the fixed mean surface plus the exposure
/// schedule and replicate count an end-to-end demo should use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyProblem {
    pub exposures: Schedule,
    /// Synthetic field replicates to draw per truth in replicate studies.
    pub replicates: usize,
}

impl Default for ToyProblem {
    fn default() -> Self {
        ToyProblem {
            exposures: Schedule::Constant(100.0),
            replicates: 1,
        }
    }
}

impl ToyProblem {
    /// The mean rate `1 + 20·exp(−u₂x)·sin²(2π(x − u₁))` at parameter
    /// `u ∈ [0,1]²` and sky coordinate `x ∈ [0,1]`.
    ///
    /// Because `sin²` has period π, the surface is exactly periodic in
    /// `u₁` with period 1/2: `u₁` and `u₁ ± 1/2` produce identical maps,
    /// so `u₁` is identifiable only up to that alias. Recovery studies
    /// therefore build corpora whose `u₁` design support spans less than
    /// half a period ([`corpus_from_axes`](Self::corpus_from_axes)); the
    /// surrogate then never learns the alias branch and the posterior is
    /// unimodal at the supported representative.
    pub fn mean(u: &[f64], x: f64) -> f64 {
        let s = (2.0 * std::f64::consts::PI * (x - u[0])).sin();
        1.0 + 20.0 * (-u[1] * x).exp() * s * s
    }

    /// The unit-square parameter domain.
    pub fn domain() -> ParameterDomain {
        ParameterDomain::new(
            vec!["u1".to_string(), "u2".to_string()],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .expect("unit square is a valid domain")
    }

    /// `n` sky locations along half a great circle on the equator:
    /// coordinate `x = i/(n−1)` maps to longitude `180·x` degrees, so
    /// chord distances grow monotonically with `|Δx|`.
    pub fn circle_grid(n: usize) -> Result<Vec<SpatialLocation>> {
        if n < 2 {
            return Err(Error::validation(format!(
                "the sky grid needs at least 2 locations, got {n}"
            )));
        }
        Self::circle_x(n)
            .into_iter()
            .map(|x| SpatialLocation::from_latlon(0.0, 180.0 * x))
            .collect()
    }

    /// The sky coordinates backing [`circle_grid`](Self::circle_grid).
    pub fn circle_x(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    /// A corpus whose designs form the full `k×k` grid over the unit
    /// square, edges included — replicate studies then hold out the
    /// interior rows.
    pub fn grid_corpus(k: usize, n_grid: usize) -> Result<SimulatorCorpus> {
        if k < 2 {
            return Err(Error::validation(format!(
                "the design grid needs at least 2 points per side, got {k}"
            )));
        }
        let mut designs = Vec::with_capacity(k * k * 2);
        for i in 0..k {
            for j in 0..k {
                designs.push(i as f64 / (k - 1) as f64);
                designs.push(j as f64 / (k - 1) as f64);
            }
        }
        Self::corpus_from_designs(RowMatrix::new(k * k, 2, designs), n_grid)
    }

    /// The strictly interior rows of the `k×k` design grid, in the same
    /// arithmetic as [`grid_corpus`](Self::grid_corpus) so each truth is
    /// bitwise equal to its design row.
    pub fn interior_truths(k: usize) -> Result<RowMatrix> {
        if k < 3 {
            return Err(Error::validation(format!(
                "a {k}x{k} grid has no interior rows"
            )));
        }
        let mut rows = Vec::with_capacity((k - 2) * (k - 2) * 2);
        for i in 1..k - 1 {
            for j in 1..k - 1 {
                rows.push(i as f64 / (k - 1) as f64);
                rows.push(j as f64 / (k - 1) as f64);
            }
        }
        Ok(RowMatrix::new((k - 2) * (k - 2), 2, rows))
    }

    /// A corpus whose designs form the product of two explicit parameter
    /// axes. Recovery studies use this with a `u₁` axis narrower than 1/2
    /// so the mean's half-period alias in `u₁` (see [`mean`](Self::mean))
    /// stays outside the design support.
    pub fn corpus_from_axes(u1: &[f64], u2: &[f64], n_grid: usize) -> Result<SimulatorCorpus> {
        for (name, axis) in [("u1", u1), ("u2", u2)] {
            if axis.len() < 2 {
                return Err(Error::validation(format!(
                    "the {name} axis needs at least 2 values, got {}",
                    axis.len()
                )));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::validation(format!(
                    "the {name} axis must be strictly increasing"
                )));
            }
            if axis.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::validation(format!(
                    "the {name} axis must lie in [0, 1]"
                )));
            }
        }
        let mut designs = Vec::with_capacity(u1.len() * u2.len() * 2);
        for &a in u1 {
            for &b in u2 {
                designs.push(a);
                designs.push(b);
            }
        }
        Self::corpus_from_designs(RowMatrix::new(u1.len() * u2.len(), 2, designs), n_grid)
    }

    /// The interior product of two axes — every row drops each axis's
    /// first and last value — copied bitwise so each truth equals its
    /// [`corpus_from_axes`](Self::corpus_from_axes) design row.
    pub fn interior_product(u1: &[f64], u2: &[f64]) -> Result<RowMatrix> {
        if u1.len() < 3 || u2.len() < 3 {
            return Err(Error::validation(
                "interior truths need at least 3 values per axis",
            ));
        }
        let (inner1, inner2) = (&u1[1..u1.len() - 1], &u2[1..u2.len() - 1]);
        let mut rows = Vec::with_capacity(inner1.len() * inner2.len() * 2);
        for &a in inner1 {
            for &b in inner2 {
                rows.push(a);
                rows.push(b);
            }
        }
        Ok(RowMatrix::new(inner1.len() * inner2.len(), 2, rows))
    }

    /// A corpus on a midpoint Latin-hypercube design: each parameter takes
    /// the `n` stratum midpoints `(c+0.5)/n` in a seeded random pairing.
    /// Midpoints rather than jittered draws keep the design a pure
    /// function of `(n_runs, seed)`.
    pub fn lhs_corpus(n_runs: usize, n_grid: usize, seed: u64) -> Result<SimulatorCorpus> {
        if n_runs < 2 {
            return Err(Error::validation(format!(
                "a corpus needs at least 2 runs, got {n_runs}"
            )));
        }
        let mut rng = stream_rng(seed, Stream::Synth);
        let mut columns = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut cells: Vec<usize> = (0..n_runs).collect();
            cells.shuffle(&mut rng);
            columns.push(cells);
        }
        let mut designs = Vec::with_capacity(n_runs * 2);
        for r in 0..n_runs {
            for column in &columns {
                designs.push((column[r] as f64 + 0.5) / n_runs as f64);
            }
        }
        Self::corpus_from_designs(RowMatrix::new(n_runs, 2, designs), n_grid)
    }

    fn corpus_from_designs(designs: RowMatrix, n_grid: usize) -> Result<SimulatorCorpus> {
        let grid = Self::circle_grid(n_grid)?;
        let xs = Self::circle_x(n_grid);
        let n_runs = designs.n_rows();
        let mut rates = Vec::with_capacity(n_runs * n_grid);
        for r in 0..n_runs {
            let u = designs.row(r).to_vec();
            rates.extend(xs.iter().map(|&x| Self::mean(&u, x)));
        }
        let run_ids = (0..n_runs).map(|r| format!("run-{r:03}")).collect();
        SimulatorCorpus::new(
            Self::domain(),
            run_ids,
            designs,
            grid,
            RowMatrix::new(n_runs, n_grid, rates),
        )
    }

    /// Draws a synthetic field directly from the mean surface at `u_star`
    /// (no corpus run involved), with this problem's exposure schedule and
    /// zero background.
    pub fn field(&self, u_star: &[f64], n_grid: usize, seed: u64) -> Result<SyntheticField> {
        if !Self::domain().contains(u_star) {
            return Err(Error::validation(format!(
                "toy truth {u_star:?} lies outside the unit square"
            )));
        }
        let locations = Self::circle_grid(n_grid)?;
        let rates: Vec<f64> = Self::circle_x(n_grid)
            .into_iter()
            .map(|x| Self::mean(u_star, x))
            .collect();
        synth_from_rates(
            &locations,
            &rates,
            u_star,
            &self.exposures,
            &Schedule::Constant(0.0),
            seed,
            Stream::Synth,
        )
    }

    /// Minimum of the mean surface over an endpoint-included lattice with
    /// `points_per_axis` values on each of `u₁`, `u₂`, and `x`.
    pub fn positivity_min(points_per_axis: usize) -> f64 {
        let axis = super::linspace(0.0, 1.0, points_per_axis);
        let mut min = f64::INFINITY;
        for &u1 in &axis {
            for &u2 in &axis {
                for &x in &axis {
                    min = min.min(Self::mean(&[u1, u2], x));
                }
            }
        }
        min
    }
}
