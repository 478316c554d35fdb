//! Dense, exact Gaussian-process regression.
//!
//! Serves two roles: the surrogate of choice when the stacked design is
//! small, and the brute-force oracle the sparse approximation is tested
//! against. Everything here is O(n³), guarded by a configurable size cap.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{
    cholesky_lower, solve_lower, solve_lower_block, ColMat, RowMatrix,
};
use crate::optim::{minimize_simplex, SimplexOptions};

/// Default cap on the training size dense operations accept.
pub const DENSE_SIZE_CAP: usize = 4000;

/// Jitter escalation bounds, as multiples of τ².
pub(crate) const JITTER_FIRST: f64 = 1e-10;
pub(crate) const JITTER_LAST: f64 = 1e-4;

/// Per-location predictive mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Report accompanying a hyperparameter fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Achieved training log-likelihood.
    pub log_likelihood: f64,
    /// Objective evaluations spent.
    pub evaluations: usize,
    /// True when the optimizer ran out of budget before converging; the
    /// returned hyperparameters are best-so-far.
    pub budget_exhausted: bool,
}

/// Lower Cholesky of the Gram matrix with the documented jitter escalation:
/// plain attempt first, then jitter 1e-10·τ² growing tenfold up to 1e-4·τ²,
/// then an ill-conditioning error naming the final jitter tried.
///
/// Exactly duplicated inputs with a zero nugget are rejected up front: the
/// Gram matrix is singular by construction, and letting jitter paper over it
/// would silently change the model.
pub(crate) fn cholesky_with_jitter(
    spec: &KernelSpec,
    inputs: &RowMatrix,
    context: &str,
) -> Result<(ColMat, f64)> {
    if spec.nugget == 0.0 {
        for i in 0..inputs.n_rows() {
            for j in (i + 1)..inputs.n_rows() {
                if inputs.row(i) == inputs.row(j) {
                    return Err(Error::IllConditioned {
                        final_jitter: 0.0,
                        context: format!(
                            "{context}: training rows {i} and {j} are identical and the nugget is zero; \
                             the covariance matrix is singular"
                        ),
                    });
                }
            }
        }
    }
    let mut jitter = 0.0f64;
    loop {
        let mut gram = spec.gram(inputs, jitter);
        if cholesky_lower(&mut gram).is_ok() {
            return Ok((gram, jitter));
        }
        jitter = if jitter == 0.0 {
            JITTER_FIRST * spec.tau2
        } else {
            jitter * 10.0
        };
        // Half-ulp slack so the final rung is attempted despite rounding.
        if jitter > JITTER_LAST * spec.tau2 * (1.0 + 1e-12) {
            return Err(Error::IllConditioned {
                final_jitter: JITTER_LAST * spec.tau2,
                context: context.to_string(),
            });
        }
    }
}

/// Exact zero-mean MVN log density of (pre-centered) responses under the
/// kernel's Gram matrix plus nugget.
pub fn log_likelihood_dense(
    spec: &KernelSpec,
    inputs: &RowMatrix,
    centered: &[f64],
) -> Result<f64> {
    let n = inputs.n_rows();
    if n == 0 || centered.len() != n {
        return Err(Error::validation(format!(
            "likelihood needs matching non-empty inputs/responses, got {n} and {}",
            centered.len()
        )));
    }
    let (chol, _) = cholesky_with_jitter(spec, inputs, "dense log-likelihood")?;
    let mut z = centered.to_vec();
    solve_lower(&chol, &mut z);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    let logdet: f64 = (0..n).map(|i| chol.get(i, i).ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (quad + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// A fitted dense GP: Cholesky factor plus the whitened response vector,
/// ready for O(n²)-per-point prediction.
#[derive(Debug, Clone)]
pub struct ExactGP {
    spec: KernelSpec,
    inputs: RowMatrix,
    /// L⁻¹ (y − ȳ), the whitened centered responses.
    whitened: Vec<f64>,
    response_mean: f64,
    chol: ColMat,
    jitter: f64,
}

impl ExactGP {
    /// Builds the predictor for fixed hyperparameters. Responses are raw;
    /// the training mean is subtracted here and restored in prediction.
    pub fn fit(spec: KernelSpec, inputs: RowMatrix, responses: &[f64]) -> Result<Self> {
        spec.validate()?;
        let n = inputs.n_rows();
        if n == 0 || responses.len() != n {
            return Err(Error::validation(format!(
                "GP fit needs matching non-empty inputs/responses, got {n} and {}",
                responses.len()
            )));
        }
        if inputs.n_cols() != spec.dim() {
            return Err(Error::validation(format!(
                "inputs have {} columns but the kernel has {} lengthscales",
                inputs.n_cols(),
                spec.dim()
            )));
        }
        let response_mean = responses.iter().sum::<f64>() / n as f64;
        let (chol, jitter) = cholesky_with_jitter(&spec, &inputs, "GP construction")?;
        let mut whitened: Vec<f64> = responses.iter().map(|&y| y - response_mean).collect();
        solve_lower(&chol, &mut whitened);
        Ok(ExactGP {
            spec,
            inputs,
            whitened,
            response_mean,
            chol,
            jitter,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn inputs(&self) -> &RowMatrix {
        &self.inputs
    }

    pub fn response_mean(&self) -> f64 {
        self.response_mean
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_train(&self) -> usize {
        self.inputs.n_rows()
    }

    /// Kriging means and standard deviations at the given points.
    pub fn predict(&self, xstar: &RowMatrix) -> PredictiveSummary {
        let n_star = xstar.n_rows();
        // V = L⁻¹ K(X, X*), one column per prediction point.
        let mut v = self.spec.cross(&self.inputs, xstar);
        solve_lower_block(&self.chol, &mut v);
        let mut means = Vec::with_capacity(n_star);
        let mut sds = Vec::with_capacity(n_star);
        for j in 0..n_star {
            let col = v.col(j);
            let mean: f64 = col.iter().zip(&self.whitened).map(|(a, b)| a * b).sum();
            let reduction: f64 = col.iter().map(|a| a * a).sum();
            means.push(mean + self.response_mean);
            sds.push((self.spec.tau2 - reduction).max(0.0).sqrt());
        }
        PredictiveSummary { means, sds }
    }
}

/// Lower/upper box and start point, in log space, for hyperparameter search.
pub(crate) struct LogSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub init: Vec<f64>,
}

/// Shared parameterization for dense and sparse fits: log(θ_1..θ_d), then
/// log(τ²), then log(g). The nugget is floored at 1e-8·var(y).
pub(crate) fn log_space(dim: usize, init: &KernelSpec, responses: &[f64]) -> LogSpace {
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    let var = responses.iter().map(|&y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let var = var.max(1e-12);
    let mut lower = vec![(1e-3f64).ln(); dim];
    let mut upper = vec![(1e3f64).ln(); dim];
    lower.push((1e-6 * var).ln());
    upper.push((1e6 * var).ln());
    let g_floor = 1e-8 * var;
    lower.push(g_floor.ln());
    upper.push((1e2 * var).ln());
    let mut start: Vec<f64> = init.theta.iter().map(|t| t.ln()).collect();
    start.push(init.tau2.ln());
    start.push(init.nugget.max(g_floor).ln());
    for k in 0..start.len() {
        start[k] = start[k].clamp(lower[k], upper[k]);
    }
    LogSpace { lower, upper, init: start }
}

pub(crate) fn spec_from_log(dim: usize, x: &[f64]) -> KernelSpec {
    KernelSpec {
        theta: x[..dim].iter().map(|v| v.exp()).collect(),
        tau2: x[dim].exp(),
        nugget: x[dim + 1].exp(),
    }
}

/// Maximum-likelihood hyperparameters by deterministic simplex search on
/// log-parameters. The returned log-likelihood never falls below the
/// (floored) initial spec's.
pub fn fit_mle_dense(
    inputs: &RowMatrix,
    responses: &[f64],
    init: &KernelSpec,
    budget: usize,
    size_cap: usize,
) -> Result<(KernelSpec, FitReport)> {
    let n = inputs.n_rows();
    if n > size_cap {
        return Err(Error::validation(format!(
            "dense fit on {n} rows exceeds the size cap {size_cap}; use the sparse surrogate"
        )));
    }
    if n == 0 || responses.len() != n {
        return Err(Error::validation("dense fit needs matching non-empty inputs/responses"));
    }
    let dim = inputs.n_cols();
    let mean = responses.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = responses.iter().map(|&y| y - mean).collect();

    let space = log_space(dim, init, responses);
    let objective = |x: &[f64]| -> f64 {
        let spec = spec_from_log(dim, x);
        match log_likelihood_dense(&spec, inputs, &centered) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };
    let opts = SimplexOptions {
        budget,
        ..SimplexOptions::default()
    };
    let r = minimize_simplex(objective, &space.init, &space.lower, &space.upper, &opts);
    let spec = spec_from_log(dim, &r.x);
    spec.validate()?;
    Ok((
        spec,
        FitReport {
            log_likelihood: -r.value,
            evaluations: r.evaluations,
            budget_exhausted: r.budget_exhausted,
        },
    ))
}

/// Log marginal likelihood of i.i.d. Gaussian residuals with the noise
/// variance integrated out under π(σ²) ∝ 1/σ²: −(n/2)·log(Σ rᵢ²), up to a
/// constant independent of the residuals' source.
pub fn gaussian_marginal_loglik(residuals: &[f64]) -> Result<f64> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::validation(format!(
            "marginal likelihood needs at least 2 residuals, got {n}"
        )));
    }
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    if rss == 0.0 {
        return Err(Error::numerical("all residuals are zero; marginal likelihood diverges"));
    }
    if !rss.is_finite() {
        return Err(Error::numerical("residual sum of squares is not finite"));
    }
    Ok(-(n as f64 / 2.0) * rss.ln())
}

/// Draws one GP sample path at the given inputs — test/experiment helper.
pub fn sample_gp(
    spec: &KernelSpec,
    inputs: &RowMatrix,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let (chol, _) = cholesky_with_jitter(spec, inputs, "GP sampling")?;
    let n = inputs.n_rows();
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..=i {
            s += chol.get(i, k) * z[k];
        }
        y[i] = s;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use approx::assert_relative_eq;

    fn grid_inputs(n: usize, d: usize) -> RowMatrix {
        // Low-discrepancy-ish deterministic points in [0,1]^d.
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for k in 0..d {
                let v = ((i as f64 + 1.0) * (0.5 + k as f64) * 0.754877666).fract();
                data.push(v);
            }
        }
        RowMatrix::new(n, d, data)
    }

    #[test]
    fn single_point_loglik() {
        let spec = KernelSpec::new(vec![1.0], 0.5, 0.5).unwrap();
        let x = RowMatrix::new(1, 1, vec![0.3]);
        let ll = log_likelihood_dense(&spec, &x, &[0.0]).unwrap();
        assert_relative_eq!(ll, -0.9189385, epsilon = 1e-6);
    }

    #[test]
    fn two_point_loglik_matches_closed_form() {
        let spec = KernelSpec::new(vec![0.7], 1.3, 0.2).unwrap();
        let x = RowMatrix::new(2, 1, vec![0.1, 0.6]);
        let y = [0.4, -0.9];
        let ll = log_likelihood_dense(&spec, &x, &y).unwrap();

        // Direct 2x2 density: the off-diagonal from the kernel, nugget on the
        // diagonal, determinant and inverse by hand.
        let a = 1.3 + 0.2;
        let b = spec.eval(&[0.1], &[0.6]);
        let det = a * a - b * b;
        let quad = (a * y[0] * y[0] - 2.0 * b * y[0] * y[1] + a * y[1] * y[1]) / det;
        let expect = -0.5 * (quad + det.ln() + 2.0 * (2.0 * std::f64::consts::PI).ln());
        assert_relative_eq!(ll, expect, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_input_without_nugget_is_singular() {
        let spec = KernelSpec::new(vec![1.0], 1.0, 0.0).unwrap();
        let x = RowMatrix::new(2, 1, vec![0.5, 0.5]);
        let err = log_likelihood_dense(&spec, &x, &[0.0, 0.0]).unwrap_err();
        assert_eq!(err.category(), crate::error::ErrorCategory::Numerical);
    }

    #[test]
    fn column_permutation_invariance() {
        let spec = KernelSpec::new(vec![0.4, 1.1], 0.9, 0.05).unwrap();
        let x = grid_inputs(40, 2);
        let mut swapped = Vec::with_capacity(80);
        for i in 0..40 {
            swapped.push(x.row(i)[1]);
            swapped.push(x.row(i)[0]);
        }
        let xs = RowMatrix::new(40, 2, swapped);
        let spec_swapped = KernelSpec::new(vec![1.1, 0.4], 0.9, 0.05).unwrap();
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = log_likelihood_dense(&spec, &x, &y).unwrap();
        let b = log_likelihood_dense(&spec_swapped, &xs, &y).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_invariant_holds() {
        let spec = KernelSpec::new(vec![0.5, 0.5], 2.0, 0.01).unwrap();
        let x = grid_inputs(60, 2);
        let (l, jitter) = cholesky_with_jitter(&spec, &x, "test").unwrap();
        assert_eq!(jitter, 0.0);
        let gram = spec.gram(&x, 0.0);
        let mut worst = 0.0f64;
        for i in 0..60 {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..=j {
                    s += l.get(i, k) * l.get(j, k);
                }
                worst = worst.max((s - gram.get(i, j)).abs());
            }
        }
        assert!(worst < 1e-8 * spec.tau2, "reconstruction error {worst}");
    }

    #[test]
    fn interpolation_and_reversion() {
        let spec = KernelSpec::new(vec![0.3], 2.0, 0.0).unwrap();
        let x = RowMatrix::new(3, 1, vec![0.1, 0.5, 0.9]);
        let y = [1.0, 3.0, -2.0];
        let gp = ExactGP::fit(spec, x, &y).unwrap();

        let at_train = gp.predict(&RowMatrix::new(3, 1, vec![0.1, 0.5, 0.9]));
        for i in 0..3 {
            assert_relative_eq!(at_train.means[i], y[i], max_relative = 1e-6);
            assert!(at_train.sds[i] <= 1e-5 * 2.0f64.sqrt());
        }

        let far = gp.predict(&RowMatrix::new(1, 1, vec![50.0]));
        let mean = (1.0 + 3.0 - 2.0) / 3.0;
        assert_relative_eq!(far.means[0], mean, epsilon = 1e-9);
        assert_relative_eq!(far.sds[0], 2.0f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn prediction_matches_explicit_three_point_solve() {
        let spec = KernelSpec::new(vec![0.4], 1.5, 0.1).unwrap();
        let xs = [0.2, 0.4, 0.7];
        let y = [0.3, -0.6, 1.1];
        let x = RowMatrix::new(3, 1, xs.to_vec());
        let gp = ExactGP::fit(spec.clone(), x, &y).unwrap();
        let star = 0.55;
        let got = gp.predict(&RowMatrix::new(1, 1, vec![star]));

        // Oracle: solve the 3x3 system with explicit Gaussian elimination.
        let mean_y = (y[0] + y[1] + y[2]) / 3.0;
        let mut k = [[0.0f64; 4]; 3]; // augmented [K | y_centered]
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = spec.eval(&[xs[i]], &[xs[j]]) + if i == j { 0.1 } else { 0.0 };
            }
            k[i][3] = y[i] - mean_y;
        }
        // Forward elimination + back substitution.
        for col in 0..3 {
            for row in (col + 1)..3 {
                let f = k[row][col] / k[col][col];
                for cc in col..4 {
                    k[row][cc] -= f * k[col][cc];
                }
            }
        }
        let mut alpha = [0.0f64; 3];
        for row in (0..3).rev() {
            let mut s = k[row][3];
            for cc in (row + 1)..3 {
                s -= k[row][cc] * alpha[cc];
            }
            alpha[row] = s / k[row][row];
        }
        let kstar: Vec<f64> = xs.iter().map(|&v| spec.eval(&[v], &[star])).collect();
        let mean = kstar.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>() + mean_y;
        assert_relative_eq!(got.means[0], mean, epsilon = 1e-9);

        // Variance oracle: tau2 - k*' K^-1 k*, K^-1 k* via the same elimination.
        let mut k2 = [[0.0f64; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k2[i][j] = spec.eval(&[xs[i]], &[xs[j]]) + if i == j { 0.1 } else { 0.0 };
            }
            k2[i][3] = kstar[i];
        }
        for col in 0..3 {
            for row in (col + 1)..3 {
                let f = k2[row][col] / k2[col][col];
                for cc in col..4 {
                    k2[row][cc] -= f * k2[col][cc];
                }
            }
        }
        let mut beta = [0.0f64; 3];
        for row in (0..3).rev() {
            let mut s = k2[row][3];
            for cc in (row + 1)..3 {
                s -= k2[row][cc] * beta[cc];
            }
            beta[row] = s / k2[row][row];
        }
        let var = 1.5 - kstar.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        assert_relative_eq!(got.sds[0], var.max(0.0).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn mle_recovers_generating_lengthscale() {
        let truth = KernelSpec::new(vec![0.3], 1.0, 1e-6).unwrap();
        let x = grid_inputs(400, 1);
        let mut rng = stream_rng(1234, Stream::Fit);
        let y = sample_gp(&truth, &x, &mut rng).unwrap();
        let init = KernelSpec::unit(1);
        let (fit, report) = fit_mle_dense(&x, &y, &init, 500, DENSE_SIZE_CAP).unwrap();
        assert!(
            fit.theta[0] > 0.15 && fit.theta[0] < 0.6,
            "theta {} (report {report:?})",
            fit.theta[0]
        );
    }

    #[test]
    fn mle_never_worse_than_init() {
        let x = grid_inputs(50, 2);
        let y: Vec<f64> = (0..50).map(|i| ((i * i) as f64 * 0.0137).sin()).collect();
        let init = KernelSpec::new(vec![0.5, 0.5], 1.0, 0.01).unwrap();
        let mean = y.iter().sum::<f64>() / 50.0;
        let centered: Vec<f64> = y.iter().map(|&v| v - mean).collect();
        // Compare against the floored init (the optimizer clamps the nugget).
        let space = log_space(2, &init, &y);
        let floored = spec_from_log(2, &space.init);
        let base = log_likelihood_dense(&floored, &x, &centered).unwrap();
        let (_, report) = fit_mle_dense(&x, &y, &init, 300, DENSE_SIZE_CAP).unwrap();
        assert!(report.log_likelihood >= base - 1e-6, "{} < {base}", report.log_likelihood);
    }

    #[test]
    fn degenerate_responses_drive_tau2_down() {
        let x = grid_inputs(30, 1);
        let y = vec![0.0; 30];
        let (fit, _) = fit_mle_dense(&x, &y, &KernelSpec::unit(1), 300, DENSE_SIZE_CAP).unwrap();
        // var floor 1e-12 puts the tau2 lower bound at 1e-18.
        assert!(fit.tau2 <= 1e-16, "tau2 {}", fit.tau2);
    }

    #[test]
    fn size_cap_enforced() {
        let x = grid_inputs(11, 1);
        let y = vec![0.0; 11];
        assert!(fit_mle_dense(&x, &y, &KernelSpec::unit(1), 10, 10).is_err());
    }

    #[test]
    fn marginal_loglik_formula() {
        assert_relative_eq!(
            gaussian_marginal_loglik(&[1.0, 1.0]).unwrap(),
            -std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        // Scaling residuals by c subtracts n log c.
        let r = [0.4, -1.2, 0.7, 0.05];
        let base = gaussian_marginal_loglik(&r).unwrap();
        let scaled: Vec<f64> = r.iter().map(|v| v * 3.0).collect();
        let got = gaussian_marginal_loglik(&scaled).unwrap();
        assert_relative_eq!(got, base - 4.0 * 3.0f64.ln(), epsilon = 1e-12);

        assert!(gaussian_marginal_loglik(&[1.0]).is_err());
        assert!(gaussian_marginal_loglik(&[0.0, 0.0]).is_err());
    }
}
