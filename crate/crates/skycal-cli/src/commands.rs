//! The subcommand implementations. Each command is a pure function of
//! (config, input files, master seed) up to wall-clock measurements, which
//! are segregated into `timings.csv` so everything else in an output
//! directory is bit-reproducible. Commands write through
//! [`OutputDir`], which finishes by listing every file's SHA-256 in a
//! `MANIFEST`, with wall-clock artifacts named but not hashed.

use std::time::Instant;

use skycal::data::{
    load_domain_file, load_field_csv, load_simulator_csv, unit_to_latlon, write_field_csv,
    CoordFormat, FieldDataset, ParameterDomain, SimulatorCorpus, StackedDesign,
};
use skycal::diagnostics::{hpd_interval, randomized_pit, write_pit_csv};
use skycal::experiments::{
    cv_crps_grid, holdout_benchmark, synth_generate, timing_sweep, OutputDir, SweepAxis,
    ToyProblem,
};
use skycal::inversion::{
    metropolis_calibrate, metropolis_calibrate_with_discrepancy, write_posterior_csv,
    write_summary,
};
use skycal::rng::{stream_rng, Stream};
use skycal::{
    fit_vecchia, CalibrationProblem, Error, FieldPredictor, LikelihoodMode, PosteriorSamples,
    Result, VecchiaSurrogate,
};

use crate::config::RunConfig;

/// Loads the domain file and the simulator corpus it scales.
fn load_corpus(config: &RunConfig) -> Result<(ParameterDomain, SimulatorCorpus)> {
    let domain = load_domain_file(config.required_path("domain")?)?;
    let corpus = load_simulator_csv(config.required_path("simulator")?, &domain)?;
    Ok((domain, corpus))
}

/// Reloads the persisted surrogate against the corpus stack it was fit to.
fn load_surrogate(config: &RunConfig, stack: &StackedDesign) -> Result<VecchiaSurrogate> {
    VecchiaSurrogate::load(config.required_path("surrogate")?, stack)
}

/// Fits the surrogate to the full simulator corpus and persists it with a
/// fit report.
pub fn cmd_fit(config: &RunConfig) -> Result<()> {
    let (domain, corpus) = load_corpus(config)?;
    let stack = corpus.stack();
    let started = Instant::now();
    let (surrogate, report) =
        fit_vecchia(&stack, config.surrogate.m, config.surrogate.fit_budget)?;
    let fit_seconds = started.elapsed().as_secs_f64();

    let mut out = OutputDir::create(config.out_dir())?;
    out.write_config_echo(config)?;
    surrogate.save(&out.path_for("surrogate.json")?)?;
    out.record_file("surrogate.json")?;

    let spec = surrogate.spec();
    let mut text = String::new();
    text.push_str(&format!("n_stacked = {}\n", stack.len()));
    text.push_str(&format!("m = {}\n", surrogate.m()));
    text.push_str(&format!("fit_budget = {}\n", config.surrogate.fit_budget));
    text.push_str(&format!("log_likelihood = {}\n", report.log_likelihood));
    text.push_str(&format!("evaluations = {}\n", report.evaluations));
    text.push_str(&format!("budget_exhausted = {}\n", report.budget_exhausted));
    text.push_str(&format!("tau2 = {}\n", spec.tau2));
    text.push_str(&format!("nugget = {}\n", spec.nugget));
    for (k, name) in input_names(&domain).iter().enumerate() {
        text.push_str(&format!("theta_{name} = {}\n", spec.theta[k]));
    }
    out.write_text("fit_report", &text)?;
    out.write_wall_clock_text("timings.csv", &format!("stage,seconds\nfit,{fit_seconds}\n"))?;
    let root = out.finish()?;

    println!(
        "fit: {} stacked points, m = {}, log-likelihood {:.4} ({} evaluations); wrote {}",
        stack.len(),
        surrogate.m(),
        report.log_likelihood,
        report.evaluations,
        root.join("surrogate.json").display()
    );
    Ok(())
}

/// Names for the stacked input columns: the three sky-direction components
/// followed by the domain's parameters.
fn input_names(domain: &ParameterDomain) -> Vec<String> {
    let mut names = vec!["x".to_string(), "y".to_string(), "z".to_string()];
    names.extend(domain.names().iter().cloned());
    names
}

/// Kriges the sky map at one parameter setting over the corpus grid.
pub fn cmd_predict(config: &RunConfig) -> Result<()> {
    let (domain, corpus) = load_corpus(config)?;
    let stack = corpus.stack();
    let surrogate = load_surrogate(config, &stack)?;

    let u = &config.experiment.predict.u;
    if u.len() != domain.dim() {
        return Err(Error::validation(format!(
            "experiment.predict.u has {} coordinates; the domain has {} parameters",
            u.len(),
            domain.dim()
        )));
    }
    if !domain.contains(u) {
        return Err(Error::validation(format!(
            "experiment.predict.u = {u:?} lies outside the parameter domain"
        )));
    }

    let predictor = FieldPredictor::new(&surrogate, corpus.grid())?;
    let summary = predictor.predict(&domain.normalize(u))?;

    let mut text = String::from("lat_deg,lon_deg,mean,sd\n");
    for (i, loc) in corpus.grid().iter().enumerate() {
        let (lat, lon) = unit_to_latlon(loc.direction());
        text.push_str(&format!("{lat},{lon},{},{}\n", summary.means[i], summary.sds[i]));
    }

    let mut out = OutputDir::create(config.out_dir())?;
    out.write_config_echo(config)?;
    out.write_text("predictions.csv", &text)?;
    let root = out.finish()?;
    println!(
        "predict: {} locations at u = {u:?}; wrote {}",
        corpus.n_grid(),
        root.join("predictions.csv").display()
    );
    Ok(())
}

/// Inverts field observations for the simulator parameters by MCMC.
pub fn cmd_calibrate(config: &RunConfig, discrepancy: bool, pit: bool) -> Result<()> {
    let (domain, corpus) = load_corpus(config)?;
    let field = load_field_csv(config.required_path("field")?)?;
    let stack = corpus.stack();
    let surrogate = load_surrogate(config, &stack)?;
    let problem =
        CalibrationProblem::sparse(&field, &surrogate, &domain, LikelihoodMode::Poisson)?;

    let mut mcmc = config.mcmc.clone();
    mcmc.seed = config.seed;
    let started = Instant::now();
    let samples = if discrepancy {
        metropolis_calibrate_with_discrepancy(&problem, &mcmc)?
    } else {
        metropolis_calibrate(&problem, &mcmc)?
    };
    let mcmc_seconds = started.elapsed().as_secs_f64();

    let mut out = OutputDir::create(config.out_dir())?;
    out.write_config_echo(config)?;
    write_posterior_csv(&out.path_for("posterior.csv")?, &samples)?;
    out.record_file("posterior.csv")?;
    write_summary(&out.path_for("summary")?, &samples)?;
    out.record_file("summary")?;

    if pit {
        let result = pit_at_posterior_mean(&problem, &field, &samples, config.seed)?;
        let metadata = format!(
            "ks_statistic = {}, ks_p_value = {}",
            result.ks_statistic, result.ks_p_value
        );
        write_pit_csv(&out.path_for("pit.csv")?, &result, &metadata)?;
        out.record_file("pit.csv")?;
    }
    out.write_wall_clock_text("timings.csv", &format!("stage,seconds\nmcmc,{mcmc_seconds}\n"))?;
    let root = out.finish()?;

    let means = samples.means();
    println!(
        "calibrate: {} draws, acceptance {:.3}, posterior mean {means:?}; wrote {}",
        samples.draws.n_rows(),
        samples.acceptance[0],
        root.join("posterior.csv").display()
    );
    if samples.zero_acceptance_warning {
        eprintln!("warning: the chain rejected every proposal over a long window; treat the posterior with suspicion");
    }
    Ok(())
}

/// Randomized PIT of the field counts against the fitted means at the
/// posterior mean parameter (with the posterior mean discrepancy, when one
/// was sampled).
fn pit_at_posterior_mean(
    problem: &CalibrationProblem,
    field: &FieldDataset,
    samples: &PosteriorSamples,
    seed: u64,
) -> Result<skycal::diagnostics::PitResult> {
    let u = samples.means();
    let rates = problem.field_means(&problem.domain().normalize(&u))?;
    let delta = match &samples.delta {
        Some(d) => d.iter().sum::<f64>() / d.len() as f64,
        None => 1.0,
    };
    let means: Vec<f64> = rates
        .iter()
        .zip(field.backgrounds())
        .zip(field.exposures())
        .map(|((&r, &b), &e)| (r * delta + b) * e)
        .collect();
    randomized_pit(field.counts(), &means, &mut stream_rng(seed, Stream::Pit))
}

/// Draws a synthetic field from one corpus run's rate map.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    let (domain, corpus) = load_corpus(config)?;
    let block = &config.experiment.synth;
    if block.u_star.is_empty() {
        return Err(Error::validation(
            "synth needs experiment.synth.u_star in the config",
        ));
    }
    let synthetic = synth_generate(
        &corpus,
        &block.u_star,
        &block.exposures,
        &block.backgrounds,
        config.seed,
    )?;

    let mut out = OutputDir::create(config.out_dir())?;
    out.write_config_echo(config)?;
    write_field_csv(&out.path_for("field.csv")?, &synthetic.data, CoordFormat::LatLon)?;
    out.record_file("field.csv")?;

    let mut text = String::new();
    for (k, name) in domain.names().iter().enumerate() {
        text.push_str(&format!("true_{name} = {}\n", synthetic.u_star[k]));
    }
    if let Some(run) = synthetic.truth_run {
        text.push_str(&format!("truth_run = {run}\n"));
    }
    text.push_str(&format!("seed = {}\n", synthetic.seed));
    out.write_text("truth", &text)?;
    let root = out.finish()?;
    println!(
        "synth: {} locations from u* = {:?}; wrote {}",
        synthetic.data.len(),
        synthetic.u_star,
        root.join("field.csv").display()
    );
    Ok(())
}

/// Hold-one-out surrogate benchmark over the corpus.
pub fn cmd_holdout(config: &RunConfig) -> Result<()> {
    let (_, corpus) = load_corpus(config)?;
    let mut holdout = config.experiment.holdout.clone();
    holdout.seed = config.seed;
    let report = holdout_benchmark(&corpus, &holdout, Some(&config.out_dir()))?;

    for m in &holdout.m_values {
        if let Some((rmse, crps)) = report.aggregate("vecchia", Some(*m)) {
            println!("holdout: vecchia m = {m}: rmse {rmse:.6}, crps {crps:.6}");
        }
    }
    if let Some((rmse, crps)) = report.aggregate("dense", None) {
        println!("holdout: dense: rmse {rmse:.6}, crps {crps:.6}");
    }
    println!("holdout: wrote {}", config.out_dir().display());
    Ok(())
}

/// Leave-location-out cross-validated CRPS grids.
pub fn cmd_cv(config: &RunConfig) -> Result<()> {
    let (_, corpus) = load_corpus(config)?;
    let field = load_field_csv(config.required_path("field")?)?;
    let mut cv = config.experiment.cv.clone();
    cv.seed = config.seed;
    let report = cv_crps_grid(&[field], &corpus, &cv, Some(&config.out_dir()))?;

    let (a1, a2) = report.lattice_argmin();
    println!(
        "cv: {} folds; lattice CRPS minimum at ({a1:.4}, {a2:.4}); wrote {}",
        cv.folds,
        config.out_dir().display()
    );
    Ok(())
}

/// Timing sweep over problem size.
pub fn cmd_bench(
    config: &RunConfig,
    axis: Option<SweepAxis>,
    sizes: Option<Vec<usize>>,
) -> Result<()> {
    let mut bench = config.experiment.bench.clone();
    bench.seed = config.seed;
    if let Some(axis) = axis {
        bench.axis = axis;
    }
    if let Some(sizes) = sizes {
        bench.sizes = sizes;
    }
    let report = timing_sweep(&bench, Some(&config.out_dir()))?;

    for m in &bench.m_values {
        match report.slope("vecchia", Some(*m)) {
            Ok(slope) => println!("bench: vecchia m = {m}: log-log slope {slope:.3}"),
            Err(e) => println!("bench: vecchia m = {m}: no slope ({e})"),
        }
    }
    if bench.include_dense {
        match report.slope("dense", None) {
            Ok(slope) => println!("bench: dense: log-log slope {slope:.3}"),
            Err(e) => println!("bench: dense: no slope ({e})"),
        }
    }
    println!("bench: wrote {}", config.out_dir().display());
    Ok(())
}

/// Parses a `--sizes` argument: either a comma list (`100,200,400`), a
/// range stepped by its start (`10..100` gives 10, 20, …, 100), or a range
/// with an explicit step (`1000..16000:1000`).
pub fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    let bad = |msg: &str| Error::validation(format!("--sizes {text:?}: {msg}"));
    let parse = |s: &str| -> Result<usize> {
        let v: usize = s
            .trim()
            .parse()
            .map_err(|_| bad(&format!("{s:?} is not a positive integer")))?;
        if v == 0 {
            return Err(bad("sizes must be positive"));
        }
        Ok(v)
    };
    if let Some((range, step)) = text.split_once(':') {
        let (lo, hi) = range
            .split_once("..")
            .ok_or_else(|| bad("expected lo..hi:step"))?;
        return expand_range(parse(lo)?, parse(hi)?, parse(step)?, &bad);
    }
    if let Some((lo, hi)) = text.split_once("..") {
        let lo = parse(lo)?;
        return expand_range(lo, parse(hi)?, lo, &bad);
    }
    let sizes: Vec<usize> = text.split(',').map(parse).collect::<Result<_>>()?;
    if sizes.is_empty() {
        return Err(bad("no sizes given"));
    }
    Ok(sizes)
}

fn expand_range(
    lo: usize,
    hi: usize,
    step: usize,
    bad: &dyn Fn(&str) -> Error,
) -> Result<Vec<usize>> {
    if hi < lo {
        return Err(bad("range end precedes its start"));
    }
    Ok((lo..=hi).step_by(step).collect())
}

/// End-to-end demonstration on the built-in toy problem: build a corpus
/// around the configured truth, fit the surrogate, draw a synthetic field
/// at the truth, calibrate, and report whether the 95% HPD intervals
/// recover it.
pub fn cmd_toy(config: &RunConfig) -> Result<()> {
    let toy = &config.experiment.toy;
    let (u1, u2) = toy.toy_axes()?;
    let corpus = ToyProblem::corpus_from_axes(&u1, &u2, toy.n_grid)?;
    let stack = corpus.stack();

    let started = Instant::now();
    let (surrogate, fit) =
        fit_vecchia(&stack, config.surrogate.m, config.surrogate.fit_budget)?;
    let fit_seconds = started.elapsed().as_secs_f64();

    let synthetic = config
        .toy_problem()
        .field(&toy.u_star, toy.n_grid, config.seed)?;
    let domain = ToyProblem::domain();
    let problem = CalibrationProblem::sparse(
        &synthetic.data,
        &surrogate,
        &domain,
        LikelihoodMode::Poisson,
    )?;
    let mut mcmc = config.mcmc.clone();
    mcmc.seed = config.seed;
    let started = Instant::now();
    let samples = metropolis_calibrate(&problem, &mcmc)?;
    let mcmc_seconds = started.elapsed().as_secs_f64();

    let mut out = OutputDir::create(config.out_dir())?;
    out.write_config_echo(config)?;
    write_field_csv(&out.path_for("field.csv")?, &synthetic.data, CoordFormat::LatLon)?;
    out.record_file("field.csv")?;
    write_posterior_csv(&out.path_for("posterior.csv")?, &samples)?;
    out.record_file("posterior.csv")?;
    write_summary(&out.path_for("summary")?, &samples)?;
    out.record_file("summary")?;

    let means = samples.means();
    let mut joint = true;
    let mut text = String::new();
    text.push_str(&format!("n_runs = {}\n", corpus.n_runs()));
    text.push_str(&format!("fit_log_likelihood = {}\n", fit.log_likelihood));
    for (k, name) in domain.names().iter().enumerate() {
        let h = hpd_interval(&samples.coordinate(k), 0.95)?;
        let covered = h.contains(toy.u_star[k]);
        joint &= covered;
        text.push_str(&format!("true_{name} = {}\n", toy.u_star[k]));
        text.push_str(&format!("mean_{name} = {}\n", means[k]));
        text.push_str(&format!("hpd95_lower_{name} = {}\n", h.lower));
        text.push_str(&format!("hpd95_upper_{name} = {}\n", h.upper));
        text.push_str(&format!("covered_{name} = {covered}\n"));
    }
    text.push_str(&format!("covered_joint = {joint}\n"));
    out.write_text("recovery", &text)?;
    out.write_wall_clock_text(
        "timings.csv",
        &format!("stage,seconds\nfit,{fit_seconds}\nmcmc,{mcmc_seconds}\n"),
    )?;
    let root = out.finish()?;

    println!(
        "toy: truth {:?}, posterior mean {means:?}, joint 95% HPD coverage: {joint}; wrote {}",
        toy.u_star,
        root.display()
    );
    Ok(())
}
