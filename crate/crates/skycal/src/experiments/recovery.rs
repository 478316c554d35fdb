//! Truth-recovery replicate study: hold out one corpus run as the truth,
//! fit the surrogate on the rest, draw synthetic counts from the truth
//! rates, calibrate, and score highest-density-interval coverage.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SimulatorCorpus;
use crate::diagnostics::{coverage_tally, hpd_interval, write_coverage_csv, CoverageSummary, HpdInterval};
use crate::error::{Error, Result};
use crate::inversion::{
    metropolis_calibrate, metropolis_calibrate_with_discrepancy, write_posterior_csv,
    CalibrationProblem, LikelihoodMode, McmcConfig, PosteriorSamples,
};
use crate::linalg::RowMatrix;
use crate::rng::Stream;
use crate::vecchia::{fit_vecchia, DEFAULT_M};

use super::synth::{excluded_training, synth_generate_stream};
use super::{OutputDir, Schedule};

/// Bins used for the per-truth posterior density CSVs.
const DENSITY_BINS: usize = 60;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// Conditioning-set size for the surrogate fits.
    pub m: usize,
    /// Objective-evaluation budget per fitting stage.
    pub fit_budget: usize,
    /// Sampler settings; the per-cell seed and chain index are overwritten
    /// from the master seed and cell number.
    pub mcmc: McmcConfig,
    /// Interval mass scored for coverage.
    pub hpd_mass: f64,
    pub exposures: Schedule,
    pub backgrounds: Schedule,
    /// Independent synthetic fields drawn per truth.
    pub replicates: usize,
    /// Run the multiplicative-discrepancy block during calibration.
    pub discrepancy: bool,
    /// Master seed; every stream in the study derives from it.
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            m: DEFAULT_M,
            fit_budget: 500,
            mcmc: McmcConfig::default(),
            hpd_mass: 0.95,
            exposures: Schedule::Constant(100.0),
            backgrounds: Schedule::Constant(0.0),
            replicates: 1,
            discrepancy: false,
            seed: 0,
        }
    }
}

/// One (truth, replicate) cell of the study.
#[derive(Debug, Clone)]
pub struct TruthCell {
    pub cell: usize,
    pub truth_index: usize,
    pub replicate: usize,
    pub truth_run: usize,
    pub u_star: Vec<f64>,
    pub posterior_mean: Vec<f64>,
    pub intervals: Vec<HpdInterval>,
    pub covered: Vec<bool>,
    pub joint: bool,
    pub delta_interval: Option<HpdInterval>,
    pub samples: PosteriorSamples,
    pub elapsed_seconds: f64,
}

/// The study's cells plus tallied coverage.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub cells: Vec<TruthCell>,
    pub coverage: CoverageSummary,
    pub names: Vec<String>,
    /// Domain bounds, for density axes in the output files.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl RecoveryReport {
    /// Cells whose intervals covered every truth coordinate.
    pub fn joint_covered(&self) -> usize {
        self.cells.iter().filter(|c| c.joint).count()
    }
}

/// Runs the recovery study over every (truth, replicate) cell, in
/// parallel, and optionally writes the output directory.
///
/// Each truth must be strictly interior to the domain and bitwise equal to
/// a corpus design row; that run is removed from training, and its removal
/// is re-checked by content hash so the surrogate can never see the truth.
pub fn run_recovery_grid(
    corpus: &SimulatorCorpus,
    truths: &RowMatrix,
    config: &RecoveryConfig,
    out: Option<&Path>,
) -> Result<RecoveryReport> {
    config.mcmc.validate()?;
    if truths.n_rows() == 0 {
        return Err(Error::validation("the recovery study needs at least one truth"));
    }
    if truths.n_cols() != corpus.domain().dim() {
        return Err(Error::validation(format!(
            "truths have {} parameters but the domain has {}",
            truths.n_cols(),
            corpus.domain().dim()
        )));
    }
    if config.replicates == 0 {
        return Err(Error::validation("replicates must be at least 1"));
    }
    if config.mcmc.stored_draws() < 20 {
        return Err(Error::validation(
            "interval coverage needs at least 20 stored draws per chain",
        ));
    }

    let n_cells = truths.n_rows() * config.replicates;
    let cells: Vec<TruthCell> = (0..n_cells)
        .into_par_iter()
        .map(|cell| run_cell(corpus, truths, config, cell))
        .collect::<Result<Vec<_>>>()?;

    let tallies: Vec<(Vec<f64>, Vec<HpdInterval>)> = cells
        .iter()
        .map(|c| (c.u_star.clone(), c.intervals.clone()))
        .collect();
    let coverage = coverage_tally(&tallies)?;
    let report = RecoveryReport {
        cells,
        coverage,
        names: corpus.domain().names().to_vec(),
        lower: corpus.domain().lower().to_vec(),
        upper: corpus.domain().upper().to_vec(),
    };

    if let Some(root) = out {
        write_outputs(&report, config, root)?;
    }
    Ok(report)
}

fn run_cell(
    corpus: &SimulatorCorpus,
    truths: &RowMatrix,
    config: &RecoveryConfig,
    cell: usize,
) -> Result<TruthCell> {
    let started = Instant::now();
    let truth_index = cell / config.replicates;
    let replicate = cell % config.replicates;
    let u_star = truths.row(truth_index).to_vec();

    let domain = corpus.domain();
    for (k, &v) in u_star.iter().enumerate() {
        if v <= domain.lower()[k] || v >= domain.upper()[k] {
            return Err(Error::validation(format!(
                "truth {truth_index} has '{}' = {v} on the domain edge; only interior truths are scored",
                domain.names()[k]
            )));
        }
    }

    let synthetic = synth_generate_stream(
        corpus,
        &u_star,
        &config.exposures,
        &config.backgrounds,
        config.seed,
        Stream::Cell(cell as u64),
    )?;
    let truth_run = synthetic.truth_run.expect("corpus generation records its run");

    let training = excluded_training(corpus, truth_run)?;
    let stack = training.stack();
    let m = config.m.min(stack.len());
    let (surrogate, _fit) = fit_vecchia(&stack, m, config.fit_budget)?;

    let problem = CalibrationProblem::sparse(
        &synthetic.data,
        &surrogate,
        domain,
        LikelihoodMode::Poisson,
    )?;
    let mut mcmc = config.mcmc.clone();
    mcmc.seed = config.seed;
    mcmc.chain = cell as u64;
    let samples = if config.discrepancy {
        metropolis_calibrate_with_discrepancy(&problem, &mcmc)?
    } else {
        metropolis_calibrate(&problem, &mcmc)?
    };

    let p = domain.dim();
    let mut intervals = Vec::with_capacity(p);
    let mut covered = Vec::with_capacity(p);
    for k in 0..p {
        let interval = hpd_interval(&samples.coordinate(k), config.hpd_mass)?;
        covered.push(interval.contains(u_star[k]));
        intervals.push(interval);
    }
    let joint = covered.iter().all(|&c| c);
    let delta_interval = match &samples.delta {
        Some(d) => Some(hpd_interval(d, config.hpd_mass)?),
        None => None,
    };

    Ok(TruthCell {
        cell,
        truth_index,
        replicate,
        truth_run,
        u_star,
        posterior_mean: samples.means(),
        intervals,
        covered,
        joint,
        delta_interval,
        samples,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Histogram density of one coordinate's draws over `[lo, hi]`, as
/// `value,density` rows at bin midpoints.
fn density_csv(draws: &[f64], lo: f64, hi: f64) -> String {
    let width = (hi - lo) / DENSITY_BINS as f64;
    let mut counts = vec![0usize; DENSITY_BINS];
    for &v in draws {
        let bin = (((v - lo) / width) as usize).min(DENSITY_BINS - 1);
        counts[bin] += 1;
    }
    let scale = 1.0 / (draws.len() as f64 * width);
    let mut text = String::from("value,density\n");
    for (b, &c) in counts.iter().enumerate() {
        let mid = lo + (b as f64 + 0.5) * width;
        text.push_str(&format!("{mid},{}\n", c as f64 * scale));
    }
    text
}

fn write_outputs(report: &RecoveryReport, config: &RecoveryConfig, root: &Path) -> Result<()> {
    let mut dir = OutputDir::create(root)?;
    dir.write_config_echo(config)?;

    let names = &report.names;
    let mut metrics = String::from("cell,truth_index,replicate,truth_run");
    for n in names {
        metrics.push_str(&format!(",truth_{n}"));
    }
    for n in names {
        metrics.push_str(&format!(",mean_{n}"));
    }
    for n in names {
        metrics.push_str(&format!(",hpd_lower_{n},hpd_upper_{n},covered_{n}"));
    }
    if config.discrepancy {
        metrics.push_str(",hpd_lower_delta,hpd_upper_delta");
    }
    metrics.push_str(",joint,acceptance_u,zero_acceptance_warning\n");
    for c in &report.cells {
        metrics.push_str(&format!(
            "{},{},{},{}",
            c.cell, c.truth_index, c.replicate, c.truth_run
        ));
        for v in &c.u_star {
            metrics.push_str(&format!(",{v}"));
        }
        for v in &c.posterior_mean {
            metrics.push_str(&format!(",{v}"));
        }
        for (interval, covered) in c.intervals.iter().zip(&c.covered) {
            metrics.push_str(&format!(
                ",{},{},{}",
                interval.lower,
                interval.upper,
                u8::from(*covered)
            ));
        }
        if let Some(d) = &c.delta_interval {
            metrics.push_str(&format!(",{},{}", d.lower, d.upper));
        } else if config.discrepancy {
            metrics.push_str(",,");
        }
        metrics.push_str(&format!(
            ",{},{},{}\n",
            u8::from(c.joint),
            c.samples.acceptance[0],
            u8::from(c.samples.zero_acceptance_warning)
        ));
    }
    dir.write_text("metrics.csv", &metrics)?;

    write_coverage_csv(&dir.path_for("coverage.csv")?, names, &report.coverage)?;
    dir.record_file("coverage.csv")?;

    let mut timings = String::from("cell,elapsed_seconds\n");
    for c in &report.cells {
        timings.push_str(&format!("{},{}\n", c.cell, c.elapsed_seconds));
        let rel = format!("cells/cell-{:03}/posterior.csv", c.cell);
        write_posterior_csv(&dir.path_for(&rel)?, &c.samples)?;
        dir.record_file(&rel)?;
        for (k, name) in names.iter().enumerate() {
            let rel = format!("cells/cell-{:03}/density_{name}.csv", c.cell);
            let text = density_csv(&c.samples.coordinate(k), report.lower[k], report.upper[k]);
            dir.write_text(&rel, &text)?;
        }
    }
    dir.write_wall_clock_text("timings.csv", &timings)?;
    dir.finish()?;
    Ok(())
}
