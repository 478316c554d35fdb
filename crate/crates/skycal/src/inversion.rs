//! Bayesian inverse solver: Poisson and Gaussian-marginal field
//! likelihoods, uniform priors over the parameter box, and adaptive
//! random-walk Metropolis over the simulator parameters, with an optional
//! multiplicative discrepancy factor.
//!
//! The surrogate enters as a plug-in: the field rate at a proposed `u` is
//! the surrogate's predictive mean, with no propagation of surrogate
//! variance into the likelihood. The sampler works entirely in normalized
//! coordinates (the unit box), so chains are invariant under affine
//! rescaling of the parameter domain; stored draws are reported in raw
//! units.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{FieldDataset, Normalization, ParameterDomain};
use crate::diagnostics::hpd_interval;
use crate::error::{Error, Result};
use crate::gp::{gaussian_marginal_loglik, ExactGP};
use crate::linalg::RowMatrix;
use crate::rng::{stream_rng, Stream};
use crate::vecchia::{FieldPredictor, VecchiaSurrogate};

/// Floor applied to the Poisson mean so the pmf stays defined when the
/// surrogate mean dips to or below zero.
pub const MEAN_FLOOR: f64 = 1e-10;

/// Burn-in iterations between proposal-scale adaptations.
const ADAPT_INTERVAL: usize = 100;

/// Consecutive all-reject iterations after burn-in that trigger the
/// stuck-chain warning.
const STUCK_WINDOW: usize = 1000;

/// Which field likelihood the sampler targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMode {
    /// Counts are Poisson with mean `(rate·δ + background)·exposure`.
    Poisson,
    /// Real-valued observations with iid Gaussian errors, the error
    /// variance marginalized out under its reference prior.
    GaussianMarginal,
}

/// Sampler configuration. `iterations` counts total Metropolis iterations
/// including burn-in; draws are stored every `thinning` iterations after
/// the first `burn_in`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Initial proposal sd for the whole-u block, in normalized units.
    pub initial_sd: f64,
    /// Initial proposal sd for the discrepancy block, on log δ.
    pub initial_sd_delta: f64,
    /// Adapt proposal scales during burn-in (frozen afterwards, so the
    /// retained samples keep detailed balance).
    pub adapt: bool,
    pub target_acceptance: f64,
    pub seed: u64,
    /// Chain index: chains with distinct indices draw from disjoint RNG
    /// streams of the same seed.
    pub chain: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 10_000,
            burn_in: 1_000,
            thinning: 10,
            initial_sd: 0.05,
            initial_sd_delta: 0.05,
            adapt: true,
            target_acceptance: 0.30,
            seed: 0,
            chain: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::validation(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thinning == 0 {
            return Err(Error::validation("thinning must be at least 1"));
        }
        if !(self.initial_sd > 0.0) || !(self.initial_sd_delta > 0.0) {
            return Err(Error::validation("proposal sds must be positive"));
        }
        if !(0.0 < self.target_acceptance && self.target_acceptance < 1.0) {
            return Err(Error::validation(format!(
                "target acceptance must lie in (0,1), got {}",
                self.target_acceptance
            )));
        }
        Ok(())
    }

    /// Number of draws a run with this configuration stores.
    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }
}

/// The surrogate evaluated along the fixed field locations: either the
/// sparse predictor (with its cached per-location distance structure) or a
/// dense GP evaluated on a location template.
pub enum FieldSurrogate<'a> {
    Sparse(FieldPredictor<'a>),
    Dense {
        gp: &'a ExactGP,
        /// n_F x (3+p) normalized input rows with the spatial columns
        /// filled; parameter columns are overwritten per proposal.
        template: RowMatrix,
    },
}

impl FieldSurrogate<'_> {
    /// Surrogate predictive means at every field location for normalized
    /// parameters `u_norm`.
    fn means(&self, u_norm: &[f64]) -> Result<Vec<f64>> {
        match self {
            FieldSurrogate::Sparse(pred) => pred.predict_means(u_norm),
            FieldSurrogate::Dense { gp, template } => {
                let mut x = template.clone();
                for i in 0..x.n_rows() {
                    x.row_mut(i)[3..3 + u_norm.len()].copy_from_slice(u_norm);
                }
                Ok(gp.predict(&x).means)
            }
        }
    }
}

/// A fully specified inverse problem: field data, a fitted surrogate
/// reaching the field locations, the parameter domain, and the likelihood
/// mode.
pub struct CalibrationProblem<'a> {
    field: &'a FieldDataset,
    surrogate: FieldSurrogate<'a>,
    domain: &'a ParameterDomain,
    mode: LikelihoodMode,
}

impl<'a> CalibrationProblem<'a> {
    /// Builds a problem around a sparse surrogate.
    pub fn sparse(
        field: &'a FieldDataset,
        surrogate: &'a VecchiaSurrogate,
        domain: &'a ParameterDomain,
        mode: LikelihoodMode,
    ) -> Result<Self> {
        Self::check_field(field, mode)?;
        if surrogate.dim() != 3 + domain.dim() {
            return Err(Error::validation(format!(
                "surrogate takes {}-dimensional inputs; domain implies {}",
                surrogate.dim(),
                3 + domain.dim()
            )));
        }
        if *surrogate.normalization() != Normalization::for_domain(domain) {
            return Err(Error::validation(
                "surrogate was trained under a different input normalization than this domain",
            ));
        }
        let predictor = FieldPredictor::new(surrogate, field.locations())?;
        Ok(CalibrationProblem {
            field,
            surrogate: FieldSurrogate::Sparse(predictor),
            domain,
            mode,
        })
    }

    /// Builds a problem around a dense GP fitted to the normalized stack.
    pub fn dense(
        field: &'a FieldDataset,
        gp: &'a ExactGP,
        normalization: &Normalization,
        domain: &'a ParameterDomain,
        mode: LikelihoodMode,
    ) -> Result<Self> {
        Self::check_field(field, mode)?;
        let d = 3 + domain.dim();
        if gp.inputs().n_cols() != d {
            return Err(Error::validation(format!(
                "dense GP takes {}-dimensional inputs; domain implies {d}",
                gp.inputs().n_cols()
            )));
        }
        if *normalization != Normalization::for_domain(domain) {
            return Err(Error::validation(
                "dense GP was trained under a different input normalization than this domain",
            ));
        }
        let n_f = field.len();
        let mut template = RowMatrix::zeros(n_f, d);
        for (i, loc) in field.locations().iter().enumerate() {
            let row = template.row_mut(i);
            for c in 0..3 {
                row[c] = normalization.apply_column(c, loc.direction()[c]);
            }
        }
        Ok(CalibrationProblem {
            field,
            surrogate: FieldSurrogate::Dense { gp, template },
            domain,
            mode,
        })
    }

    fn check_field(field: &FieldDataset, mode: LikelihoodMode) -> Result<()> {
        if mode == LikelihoodMode::Poisson && !field.has_integer_counts() {
            return Err(Error::validation(
                "Poisson likelihood needs integer counts; use the Gaussian mode for real-valued data",
            ));
        }
        Ok(())
    }

    pub fn domain(&self) -> &ParameterDomain {
        self.domain
    }

    pub fn mode(&self) -> LikelihoodMode {
        self.mode
    }

    /// Surrogate means at the field locations for normalized `u`.
    pub fn field_means(&self, u_norm: &[f64]) -> Result<Vec<f64>> {
        self.surrogate.means(u_norm)
    }

    /// Field log-likelihood given precomputed surrogate rates. For the
    /// Gaussian mode the observations are compared to the rates directly
    /// (no background, δ fixed at 1).
    pub fn log_likelihood(&self, rates: &[f64], delta: f64) -> Result<f64> {
        match self.mode {
            LikelihoodMode::Poisson => poisson_loglik(self.field, rates, delta),
            LikelihoodMode::GaussianMarginal => {
                let residuals: Vec<f64> = self
                    .field
                    .counts()
                    .iter()
                    .zip(rates)
                    .map(|(y, r)| y - r)
                    .collect();
                gaussian_marginal_loglik(&residuals)
            }
        }
    }
}

/// Poisson log-likelihood of the field counts given surrogate `rates` and
/// discrepancy `delta`: `Σ_i [y_i·ln(μ_i e_i) − μ_i e_i − ln(y_i!)]` with
/// `μ_i = max(rates_i·delta + background_i, MEAN_FLOOR)`.
pub fn poisson_loglik(field: &FieldDataset, rates: &[f64], delta: f64) -> Result<f64> {
    if rates.len() != field.len() {
        return Err(Error::validation(format!(
            "{} rates for {} field observations",
            rates.len(),
            field.len()
        )));
    }
    if let Some(i) = rates.iter().position(|r| !r.is_finite()) {
        return Err(Error::numerical(format!(
            "non-finite surrogate rate {} at field index {i}",
            rates[i]
        )));
    }
    let mut ll = 0.0;
    for i in 0..field.len() {
        let mu = (rates[i] * delta + field.backgrounds()[i]).max(MEAN_FLOOR);
        let me = mu * field.exposures()[i];
        let y = field.counts()[i];
        ll += y * me.ln() - me - ln_gamma(y + 1.0);
    }
    Ok(ll)
}

/// One burn-in adaptation step: scales the proposal sd by
/// `exp(observed − target)`, nudging the acceptance rate toward the
/// target.
pub fn adapt_proposal(observed_rate: f64, sd: f64, target_rate: f64) -> f64 {
    sd * (observed_rate - target_rate).exp()
}

/// Metropolis accept/reject for a symmetric proposal: with unit proposal
/// ratio the log acceptance ratio decomposes into the likelihood and prior
/// log-differences alone.
fn accept_transition(log_like_diff: f64, log_prior_diff: f64, uniform: f64) -> bool {
    uniform.ln() < log_like_diff + log_prior_diff
}

/// Thinned posterior draws plus the traces needed to audit the run.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    /// s x p stored parameter draws, raw units.
    pub draws: RowMatrix,
    /// Stored discrepancy draws (present iff the discrepancy block ran).
    pub delta: Option<Vec<f64>>,
    /// Log-likelihood after each iteration (length = total iterations).
    pub loglik_trace: Vec<f64>,
    /// Whether any block accepted at each iteration.
    pub accepted_trace: Vec<bool>,
    /// Post-burn-in acceptance rate per block (u first, then δ if on).
    pub acceptance: Vec<f64>,
    /// Set when 1000 consecutive post-burn-in iterations rejected in every
    /// block.
    pub zero_acceptance_warning: bool,
    /// Parameter names, for output files.
    pub names: Vec<String>,
    pub seed: u64,
    pub config: McmcConfig,
}

impl PosteriorSamples {
    /// Iteration index of stored draw `j` (1-based, matching the trace).
    pub fn draw_iteration(&self, j: usize) -> usize {
        self.config.burn_in + (j + 1) * self.config.thinning
    }

    /// Posterior mean per coordinate.
    pub fn means(&self) -> Vec<f64> {
        let s = self.draws.n_rows() as f64;
        let p = self.draws.n_cols();
        let mut out = vec![0.0; p];
        for i in 0..self.draws.n_rows() {
            for (k, v) in self.draws.row(i).iter().enumerate() {
                out[k] += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= s);
        out
    }

    /// One coordinate's draws as a column vector.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        (0..self.draws.n_rows()).map(|i| self.draws.row(i)[k]).collect()
    }
}

/// Poisson calibration without discrepancy (δ pinned at 1).
pub fn metropolis_calibrate(
    problem: &CalibrationProblem,
    config: &McmcConfig,
) -> Result<PosteriorSamples> {
    if problem.mode() != LikelihoodMode::Poisson {
        return Err(Error::validation(
            "metropolis_calibrate runs the Poisson likelihood; use gaussian_calibrate for Gaussian mode",
        ));
    }
    run_chain(problem, config, false)
}

/// Poisson calibration with the multiplicative discrepancy block: a
/// random-walk on log δ with prior log δ ~ N(0,1), updated after the u
/// block each iteration.
pub fn metropolis_calibrate_with_discrepancy(
    problem: &CalibrationProblem,
    config: &McmcConfig,
) -> Result<PosteriorSamples> {
    if problem.mode() != LikelihoodMode::Poisson {
        return Err(Error::validation(
            "the discrepancy model is defined for the Poisson likelihood",
        ));
    }
    run_chain(problem, config, true)
}

/// Gaussian-marginal calibration (real-valued field data, error variance
/// marginalized).
pub fn gaussian_calibrate(
    problem: &CalibrationProblem,
    config: &McmcConfig,
) -> Result<PosteriorSamples> {
    if problem.mode() != LikelihoodMode::GaussianMarginal {
        return Err(Error::validation(
            "gaussian_calibrate needs a problem in Gaussian-marginal mode",
        ));
    }
    run_chain(problem, config, false)
}

fn run_chain(
    problem: &CalibrationProblem,
    config: &McmcConfig,
    discrepancy: bool,
) -> Result<PosteriorSamples> {
    config.validate()?;
    let p = problem.domain.dim();
    let total = config.iterations;
    let burn = config.burn_in;
    let stored = config.stored_draws();
    let mut rng = stream_rng(config.seed, Stream::Chain(config.chain));

    // Chain state: normalized u, the surrogate rates at u, log δ, and the
    // current field log-likelihood.
    let mut u = vec![0.5; p];
    let mut rates = problem.field_means(&u)?;
    let mut phi = 0.0f64;
    let mut delta = 1.0f64;
    let mut ll = problem.log_likelihood(&rates, delta)?;

    let mut sd_u = config.initial_sd;
    let mut sd_d = config.initial_sd_delta;

    let mut loglik_trace = Vec::with_capacity(total);
    let mut accepted_trace = Vec::with_capacity(total);
    let mut draws = RowMatrix::zeros(stored, p);
    let mut deltas = if discrepancy {
        Some(Vec::with_capacity(stored))
    } else {
        None
    };

    let mut accepted_u_post = 0usize;
    let mut accepted_d_post = 0usize;
    let mut window_u = 0usize;
    let mut window_d = 0usize;
    let mut consecutive_rejects = 0usize;
    let mut warning = false;
    let mut slot = 0usize;

    for t in 1..=total {
        let mut iteration_accepted = false;

        // Whole-u block: Gaussian random walk in normalized coordinates.
        // Proposals leaving the unit box have zero prior density and are
        // rejected without a surrogate call.
        let proposal: Vec<f64> = u
            .iter()
            .map(|&c| c + sd_u * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if proposal.iter().all(|c| (0.0..=1.0).contains(c)) {
            let proposal_rates = problem.field_means(&proposal).map_err(|e| {
                Error::numerical(format!("surrogate prediction failed at iteration {t}: {e}"))
            })?;
            let proposal_ll = problem.log_likelihood(&proposal_rates, delta)?;
            let uniform: f64 = rng.gen();
            if accept_transition(proposal_ll - ll, 0.0, uniform) {
                u = proposal;
                rates = proposal_rates;
                ll = proposal_ll;
                iteration_accepted = true;
                if t > burn {
                    accepted_u_post += 1;
                } else {
                    window_u += 1;
                }
            }
        }

        // Discrepancy block: random walk on φ = log δ, reusing the rates
        // already computed for the current u.
        if discrepancy {
            let proposal_phi = phi + sd_d * rng.sample::<f64, _>(StandardNormal);
            let proposal_ll = problem.log_likelihood(&rates, proposal_phi.exp())?;
            let uniform: f64 = rng.gen();
            let prior_diff = 0.5 * (phi * phi - proposal_phi * proposal_phi);
            if accept_transition(proposal_ll - ll, prior_diff, uniform) {
                phi = proposal_phi;
                delta = proposal_phi.exp();
                ll = proposal_ll;
                iteration_accepted = true;
                if t > burn {
                    accepted_d_post += 1;
                } else {
                    window_d += 1;
                }
            }
        }

        loglik_trace.push(ll);
        accepted_trace.push(iteration_accepted);

        if config.adapt && t <= burn && t % ADAPT_INTERVAL == 0 {
            sd_u = adapt_proposal(
                window_u as f64 / ADAPT_INTERVAL as f64,
                sd_u,
                config.target_acceptance,
            );
            window_u = 0;
            if discrepancy {
                sd_d = adapt_proposal(
                    window_d as f64 / ADAPT_INTERVAL as f64,
                    sd_d,
                    config.target_acceptance,
                );
                window_d = 0;
            }
        }

        if t > burn {
            if iteration_accepted {
                consecutive_rejects = 0;
            } else {
                consecutive_rejects += 1;
                if consecutive_rejects >= STUCK_WINDOW {
                    warning = true;
                }
            }
            if (t - burn) % config.thinning == 0 && slot < stored {
                draws
                    .row_mut(slot)
                    .copy_from_slice(&problem.domain.denormalize(&u));
                if let Some(d) = deltas.as_mut() {
                    d.push(delta);
                }
                slot += 1;
            }
        }
    }
    debug_assert_eq!(slot, stored);

    let post = (total - burn) as f64;
    let mut acceptance = vec![accepted_u_post as f64 / post];
    if discrepancy {
        acceptance.push(accepted_d_post as f64 / post);
    }
    Ok(PosteriorSamples {
        draws,
        delta: deltas,
        loglik_trace,
        accepted_trace,
        acceptance,
        zero_acceptance_warning: warning,
        names: problem.domain.names().to_vec(),
        seed: config.seed,
        config: config.clone(),
    })
}

/// Writes stored draws as CSV: `iter,u_1,...,u_p[,delta],loglik,accepted`,
/// where `iter` is the chain iteration the draw was taken at, `loglik` the
/// log-likelihood after that iteration, and `accepted` 1 if any block
/// accepted there.
pub fn write_posterior_csv(path: &Path, samples: &PosteriorSamples) -> Result<()> {
    let p = samples.draws.n_cols();
    let mut text = String::from("iter");
    for k in 1..=p {
        text.push_str(&format!(",u_{k}"));
    }
    if samples.delta.is_some() {
        text.push_str(",delta");
    }
    text.push_str(",loglik,accepted\n");
    for j in 0..samples.draws.n_rows() {
        let t = samples.draw_iteration(j);
        text.push_str(&format!("{t}"));
        for v in samples.draws.row(j) {
            text.push_str(&format!(",{v}"));
        }
        if let Some(d) = &samples.delta {
            text.push_str(&format!(",{}", d[j]));
        }
        text.push_str(&format!(
            ",{},{}\n",
            samples.loglik_trace[t - 1],
            samples.accepted_trace[t - 1] as u8
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes a key-value run summary: posterior means, per-coordinate 95% HPD
/// bounds (when at least 20 draws were stored), acceptance rates, and the
/// configuration echo.
pub fn write_summary(path: &Path, samples: &PosteriorSamples) -> Result<()> {
    let c = &samples.config;
    let mut text = String::new();
    text.push_str(&format!("seed = {}\n", samples.seed));
    text.push_str(&format!("chain = {}\n", c.chain));
    text.push_str(&format!("iterations = {}\n", c.iterations));
    text.push_str(&format!("burn_in = {}\n", c.burn_in));
    text.push_str(&format!("thinning = {}\n", c.thinning));
    text.push_str(&format!("initial_sd = {}\n", c.initial_sd));
    text.push_str(&format!("initial_sd_delta = {}\n", c.initial_sd_delta));
    text.push_str(&format!("adapt = {}\n", c.adapt));
    text.push_str(&format!("target_acceptance = {}\n", c.target_acceptance));
    text.push_str(&format!("stored_draws = {}\n", samples.draws.n_rows()));
    text.push_str(&format!("acceptance_u = {}\n", samples.acceptance[0]));
    if samples.acceptance.len() > 1 {
        text.push_str(&format!("acceptance_delta = {}\n", samples.acceptance[1]));
    }
    text.push_str(&format!(
        "zero_acceptance_warning = {}\n",
        samples.zero_acceptance_warning
    ));
    let means = samples.means();
    for (k, name) in samples.names.iter().enumerate() {
        text.push_str(&format!("mean_{name} = {}\n", means[k]));
    }
    if let Some(d) = &samples.delta {
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        text.push_str(&format!("mean_delta = {mean}\n"));
    }
    if samples.draws.n_rows() >= 20 {
        for (k, name) in samples.names.iter().enumerate() {
            let h = hpd_interval(&samples.coordinate(k), 0.95)?;
            text.push_str(&format!("hpd95_lower_{name} = {}\n", h.lower));
            text.push_str(&format!("hpd95_upper_{name} = {}\n", h.upper));
        }
        if let Some(d) = &samples.delta {
            let h = hpd_interval(d, 0.95)?;
            text.push_str(&format!("hpd95_lower_delta = {}\n", h.lower));
            text.push_str(&format!("hpd95_upper_delta = {}\n", h.upper));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
