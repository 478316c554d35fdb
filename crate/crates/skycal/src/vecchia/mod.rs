//! Sparse Gaussian-process surrogate via the Vecchia factorization.
//!
//! The dense MVN likelihood is replaced by a cascade of univariate
//! conditionals: under a chosen ordering, each response conditions only on
//! its m nearest predecessors, taking the O(n³) likelihood down to O(n·m³).
//! With m = n−1 the factorization is exact, which is the backbone of the
//! test suite. Fitting runs in two stages: hyperparameters are first
//! estimated with neighbors found under unit scales, then the ordering and
//! conditioning sets are rebuilt with distances scaled by the fitted
//! lengthscales (so neighbors concentrate along dimensions the response
//! actually varies in) and the fit is repeated.

mod field;
mod knn;
mod order;
mod persist;

pub use field::FieldPredictor;
pub use knn::{build_neighbors, build_neighbors_brute_force, KdTree, NeighborSets};
pub use order::{OrderMethod, Ordering};
pub use persist::stacked_sha256;

use rayon::prelude::*;

use crate::data::{Normalization, StackedDesign};
use crate::error::{Error, Result};
use crate::gp::{log_space, spec_from_log, FitReport, PredictiveSummary, JITTER_FIRST, JITTER_LAST};
use crate::kernel::KernelSpec;
use crate::linalg::{small_cholesky, RowMatrix};
use crate::optim::{minimize_simplex, SimplexOptions};

/// Default conditioning-set size.
pub const DEFAULT_M: usize = 25;

/// Builds and factors a small covariance matrix, escalating diagonal jitter
/// under the same policy as the dense path when the factorization fails.
fn chol_escalate(
    mut build: impl FnMut(f64, &mut [f64]),
    size: usize,
    tau2: f64,
    context: &str,
) -> Result<Vec<f64>> {
    let mut a = vec![0.0; size * size];
    let mut jitter = 0.0f64;
    loop {
        build(jitter, &mut a);
        if small_cholesky(&mut a, size).is_ok() {
            return Ok(a);
        }
        jitter = if jitter == 0.0 {
            JITTER_FIRST * tau2
        } else {
            jitter * 10.0
        };
        if jitter > JITTER_LAST * tau2 * (1.0 + 1e-12) {
            return Err(Error::IllConditioned {
                final_jitter: JITTER_LAST * tau2,
                context: context.to_string(),
            });
        }
    }
}

/// Conditional mean and variance of ordered point `k` given its (noisy)
/// conditioning set, from one augmented local Cholesky with the target last.
fn conditional_of_target(
    spec: &KernelSpec,
    pts: &RowMatrix,
    ys: &[f64],
    set: &[usize],
    k: usize,
) -> Result<(f64, f64)> {
    let q = set.len();
    if q == 0 {
        return Ok((0.0, spec.tau2 + spec.nugget));
    }
    let size = q + 1;
    let l = chol_escalate(
        |extra, a| {
            for i in 0..size {
                let xi = pts.row(if i < q { set[i] } else { k });
                for j in 0..=i {
                    let xj = pts.row(if j < q { set[j] } else { k });
                    let mut v = spec.eval(xi, xj);
                    if i == j {
                        v += spec.nugget + extra;
                    }
                    a[i * size + j] = v;
                    a[j * size + i] = v;
                }
            }
        },
        size,
        spec.tau2,
        &format!("local conditional at ordered position {k}"),
    )?;
    // Forward-solve the leading q x q block against the set's responses; the
    // last row of L then gives the conditional directly:
    // mean = Σ_j L[q][j]·z[j], var = L[q][q]².
    let mut z = vec![0.0; q];
    for i in 0..q {
        let mut s = ys[set[i]];
        for j in 0..i {
            s -= l[i * size + j] * z[j];
        }
        z[i] = s / l[i * size + i];
    }
    let mut mean = 0.0;
    for j in 0..q {
        mean += l[q * size + j] * z[j];
    }
    let sd = l[q * size + q];
    Ok((mean, sd * sd))
}

/// Kriging mean/variance at an arbitrary query from a fixed conditioning
/// set. The variance is the latent one (no nugget), matching the dense
/// predictor.
fn kriging_from_set(
    spec: &KernelSpec,
    pts: &RowMatrix,
    ys: &[f64],
    set: &[usize],
    query: &[f64],
) -> Result<(f64, f64)> {
    let q = set.len();
    if q == 0 {
        return Ok((0.0, spec.tau2));
    }
    let l = chol_escalate(
        |extra, a| {
            for i in 0..q {
                let xi = pts.row(set[i]);
                for j in 0..=i {
                    let mut v = spec.eval(xi, pts.row(set[j]));
                    if i == j {
                        v += spec.nugget + extra;
                    }
                    a[i * q + j] = v;
                    a[j * q + i] = v;
                }
            }
        },
        q,
        spec.tau2,
        "local kriging system",
    )?;
    let mut z = vec![0.0; q];
    let mut v = vec![0.0; q];
    for i in 0..q {
        let xi = pts.row(set[i]);
        let mut zs = ys[set[i]];
        let mut vs = spec.eval(xi, query);
        for j in 0..i {
            zs -= l[i * q + j] * z[j];
            vs -= l[i * q + j] * v[j];
        }
        z[i] = zs / l[i * q + i];
        v[i] = vs / l[i * q + i];
    }
    let mean: f64 = v.iter().zip(&z).map(|(a, b)| a * b).sum();
    let reduction: f64 = v.iter().map(|a| a * a).sum();
    Ok((mean, (spec.tau2 - reduction).max(0.0)))
}

/// Sparse log-likelihood over pre-ordered data: terms are computed in
/// parallel, then reduced sequentially so the sum is independent of the
/// worker count.
fn ll_ordered(
    spec: &KernelSpec,
    ordered_inputs: &RowMatrix,
    ordered_ys: &[f64],
    neighbors: &NeighborSets,
) -> Result<f64> {
    let n = ordered_ys.len();
    let terms: Result<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let (mean, var) =
                conditional_of_target(spec, ordered_inputs, ordered_ys, neighbors.set(k), k)?;
            let r = ordered_ys[k] - mean;
            Ok(-0.5 * ((2.0 * std::f64::consts::PI * var).ln() + r * r / var))
        })
        .collect();
    Ok(terms?.iter().sum())
}

/// Vecchia log-likelihood of (pre-centered) responses under the given
/// ordering and conditioning sets. Equals the dense MVN log-likelihood when
/// every set holds all predecessors.
pub fn vecchia_log_likelihood(
    spec: &KernelSpec,
    inputs: &RowMatrix,
    centered: &[f64],
    ordering: &Ordering,
    neighbors: &NeighborSets,
) -> Result<f64> {
    let n = inputs.n_rows();
    if centered.len() != n || ordering.len() != n || neighbors.len() != n {
        return Err(Error::validation(format!(
            "inconsistent sparse-likelihood shapes: {n} inputs, {} responses, {} ordered, {} sets",
            centered.len(),
            ordering.len(),
            neighbors.len()
        )));
    }
    if n == 0 {
        return Err(Error::validation("likelihood of an empty dataset"));
    }
    let ordered_inputs = inputs.select_rows(ordering.perm());
    let ordered_ys: Vec<f64> = ordering.perm().iter().map(|&i| centered[i]).collect();
    ll_ordered(spec, &ordered_inputs, &ordered_ys, neighbors)
}

/// A fitted sparse surrogate: hyperparameters plus the ordered training
/// stack, conditioning structure, and a search tree for prediction-time
/// neighbor queries.
#[derive(Debug, Clone)]
pub struct VecchiaSurrogate {
    spec: KernelSpec,
    m: usize,
    ordering: Ordering,
    neighbors: NeighborSets,
    /// Scales the ordering/neighbors/tree were built under (the stage-1
    /// lengthscales after a two-stage fit — deliberately not `spec.theta`).
    build_scales: Vec<f64>,
    ordered_inputs: RowMatrix,
    ordered_centered: Vec<f64>,
    response_mean: f64,
    normalization: Normalization,
    n_runs: usize,
    n_grid: usize,
    training_hash: String,
    tree: KdTree,
}

impl VecchiaSurrogate {
    /// Assembles the surrogate for a known spec and neighbor geometry.
    pub(crate) fn assemble(
        spec: KernelSpec,
        design: &StackedDesign,
        ordering: Ordering,
        m: usize,
        build_scales: Vec<f64>,
    ) -> Result<Self> {
        spec.validate()?;
        let n = design.len();
        if ordering.len() != n {
            return Err(Error::validation("ordering length does not match the design"));
        }
        let neighbors = build_neighbors(design.inputs(), &ordering, m, &build_scales);
        let response_mean = design.responses().iter().sum::<f64>() / n as f64;
        let ordered_inputs = design.inputs().select_rows(ordering.perm());
        let ordered_centered: Vec<f64> = ordering
            .perm()
            .iter()
            .map(|&i| design.responses()[i] - response_mean)
            .collect();
        let d = ordered_inputs.n_cols();
        let mut scaled = vec![0.0; n * d];
        for k in 0..n {
            let row = ordered_inputs.row(k);
            for c in 0..d {
                scaled[k * d + c] = row[c] / build_scales[c];
            }
        }
        let tree = KdTree::build(RowMatrix::new(n, d, scaled));
        Ok(VecchiaSurrogate {
            spec,
            m,
            ordering,
            neighbors,
            build_scales,
            ordered_inputs,
            ordered_centered,
            response_mean,
            normalization: design.normalization().clone(),
            n_runs: design.n_runs(),
            n_grid: design.n_grid(),
            training_hash: stacked_sha256(design),
            tree,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ordering(&self) -> &Ordering {
        &self.ordering
    }

    pub fn neighbors(&self) -> &NeighborSets {
        &self.neighbors
    }

    pub fn build_scales(&self) -> &[f64] {
        &self.build_scales
    }

    pub fn response_mean(&self) -> f64 {
        self.response_mean
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn n_train(&self) -> usize {
        self.ordered_centered.len()
    }

    pub fn dim(&self) -> usize {
        self.ordered_inputs.n_cols()
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn training_hash(&self) -> &str {
        &self.training_hash
    }

    pub(crate) fn ordered_inputs(&self) -> &RowMatrix {
        &self.ordered_inputs
    }

    pub(crate) fn ordered_centered(&self) -> &[f64] {
        &self.ordered_centered
    }

    /// Training log-likelihood of the stored stack under the stored spec.
    pub fn log_likelihood(&self) -> Result<f64> {
        ll_ordered(&self.spec, &self.ordered_inputs, &self.ordered_centered, &self.neighbors)
    }

    /// Conditional mean/variance of ordered training point `k` given its
    /// conditioning set — exposed for the consistency tests.
    pub fn conditional_moments(&self, k: usize) -> Result<(f64, f64)> {
        conditional_of_target(
            &self.spec,
            &self.ordered_inputs,
            &self.ordered_centered,
            self.neighbors.set(k),
            k,
        )
    }

    /// Predictive mean/sd at normalized input rows. Each point conditions
    /// independently on its m nearest training points under the build
    /// scales.
    pub fn predict(&self, xstar: &RowMatrix) -> Result<PredictiveSummary> {
        if xstar.n_cols() != self.dim() {
            return Err(Error::validation(format!(
                "prediction inputs have {} columns, surrogate expects {}",
                xstar.n_cols(),
                self.dim()
            )));
        }
        let n_star = xstar.n_rows();
        let d = self.dim();
        let pairs: Result<Vec<(f64, f64)>> = (0..n_star)
            .into_par_iter()
            .map(|j| {
                let mut q = vec![0.0; d];
                knn::scale_query(xstar.row(j), &self.build_scales, &mut q);
                let set = self.tree.k_nearest_before(&q, self.m, self.n_train());
                let (mean, var) = kriging_from_set(
                    &self.spec,
                    &self.ordered_inputs,
                    &self.ordered_centered,
                    &set,
                    xstar.row(j),
                )?;
                Ok((mean + self.response_mean, var.sqrt()))
            })
            .collect();
        let pairs = pairs?;
        Ok(PredictiveSummary {
            means: pairs.iter().map(|p| p.0).collect(),
            sds: pairs.iter().map(|p| p.1).collect(),
        })
    }
}

/// Two-stage Scaled-Vecchia fit: estimate hyperparameters with unit-scale
/// neighbors, rebuild the geometry under the fitted lengthscales, refit.
/// `budget` bounds the objective evaluations of each stage.
pub fn fit_vecchia(
    design: &StackedDesign,
    m: usize,
    budget: usize,
) -> Result<(VecchiaSurrogate, FitReport)> {
    fit_vecchia_from(design, m, budget, &KernelSpec::unit(design.dim()))
}

/// As [`fit_vecchia`], from an explicit initial spec.
pub fn fit_vecchia_from(
    design: &StackedDesign,
    m: usize,
    budget: usize,
    init: &KernelSpec,
) -> Result<(VecchiaSurrogate, FitReport)> {
    let n = design.len();
    if n < 2 {
        return Err(Error::validation(format!(
            "sparse fit needs at least 2 training rows, got {n}"
        )));
    }
    if m == 0 {
        return Err(Error::validation("conditioning-set size m must be at least 1"));
    }
    let d = design.dim();
    let response_mean = design.responses().iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = design.responses().iter().map(|&y| y - response_mean).collect();

    let opts = SimplexOptions {
        budget,
        ..SimplexOptions::default()
    };
    let mut space = log_space(d, init, design.responses());

    let stage = |scales: &[f64], start: &[f64]| -> (Ordering, Vec<f64>, f64, usize, bool) {
        let ordering = Ordering::maximin(design.inputs(), scales);
        let neighbors = build_neighbors(design.inputs(), &ordering, m, scales);
        let ordered_inputs = design.inputs().select_rows(ordering.perm());
        let ordered_ys: Vec<f64> = ordering.perm().iter().map(|&i| centered[i]).collect();
        let objective = |x: &[f64]| -> f64 {
            let spec = spec_from_log(d, x);
            match ll_ordered(&spec, &ordered_inputs, &ordered_ys, &neighbors) {
                Ok(ll) => -ll,
                Err(_) => f64::INFINITY,
            }
        };
        let r = minimize_simplex(objective, start, &space.lower, &space.upper, &opts);
        (ordering, r.x, -r.value, r.evaluations, r.budget_exhausted)
    };

    // Stage 1: unit scales.
    let start1 = space.init.clone();
    let (_, x1, _ll1, evals1, exhausted1) = stage(&vec![1.0; d], &start1);
    let theta1 = spec_from_log(d, &x1).theta;

    // Stage 2: geometry rescaled by the stage-1 lengthscales.
    space.init = x1.clone();
    let (ordering2, x2, ll2, evals2, exhausted2) = stage(&theta1, &x1);
    let spec = spec_from_log(d, &x2);
    spec.validate()?;

    let surrogate = VecchiaSurrogate::assemble(spec, design, ordering2, m, theta1)?;
    Ok((
        surrogate,
        FitReport {
            log_likelihood: ll2,
            evaluations: evals1 + evals2,
            budget_exhausted: exhausted1 || exhausted2,
        },
    ))
}
