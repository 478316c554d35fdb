//! Cross-validated CRPS surfaces: split the field data into folds,
//! calibrate on each fold's complement, and score held-out count
//! predictions along parameter-axis grids and a two-parameter lattice.
//!
//! The CRPS at a grid point compares the plug-in count prediction
//! `(λ̂(u) + λ_b)·e` — Gaussian with moment-matched variance — to the
//! held-out observed counts, averaged over the fold's locations and then
//! over folds.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FieldDataset, SimulatorCorpus};
use crate::diagnostics::{crps_gaussian, write_crps_grid_csv};
use crate::error::{Error, Result};
use crate::inversion::{
    metropolis_calibrate, write_posterior_csv, CalibrationProblem, LikelihoodMode, McmcConfig,
    PosteriorSamples, MEAN_FLOOR,
};
use crate::linalg::RowMatrix;
use crate::rng::{stream_rng, Stream};
use crate::vecchia::{fit_vecchia, FieldPredictor, DEFAULT_M};

use super::{linspace, OutputDir};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    /// Conditioning-set size for the one shared surrogate fit.
    pub m: usize,
    pub fit_budget: usize,
    /// Sampler settings; seed and chain are overwritten per fold.
    pub mcmc: McmcConfig,
    /// Points on each single-parameter grid.
    pub param_grid: usize,
    /// Points per side of the two-parameter lattice.
    pub lattice: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            m: DEFAULT_M,
            fit_budget: 500,
            mcmc: McmcConfig::default(),
            param_grid: 200,
            lattice: 30,
            seed: 0,
        }
    }
}

/// One fold's calibration summary.
#[derive(Debug, Clone)]
pub struct CvFoldCell {
    pub fold: usize,
    pub held_out: usize,
    pub posterior_mean: Vec<f64>,
    pub acceptance_u: f64,
    pub samples: PosteriorSamples,
}

/// Fold-averaged CRPS surfaces plus per-fold summaries.
#[derive(Debug, Clone)]
pub struct CvReport {
    pub cells: Vec<CvFoldCell>,
    /// Fold id assigned to each location of the combined dataset.
    pub assignments: Vec<usize>,
    pub names: Vec<String>,
    pub param1_values: Vec<f64>,
    pub param1_crps: Vec<f64>,
    pub param2_values: Vec<f64>,
    pub param2_crps: Vec<f64>,
    /// Lattice points, row-major with the first parameter outermost.
    pub lattice_points: RowMatrix,
    pub lattice_crps: Vec<f64>,
}

impl CvReport {
    /// Coordinates of the lattice CRPS minimum (first minimum on ties).
    pub fn lattice_argmin(&self) -> (f64, f64) {
        let mut best = 0;
        for i in 1..self.lattice_crps.len() {
            if self.lattice_crps[i] < self.lattice_crps[best] {
                best = i;
            }
        }
        let row = self.lattice_points.row(best);
        (row[0], row[1])
    }

    /// Spacing of the lattice in each parameter.
    pub fn lattice_cell_widths(&self) -> (f64, f64) {
        let n = self.lattice_crps.len();
        let side = (n as f64).sqrt().round() as usize;
        let first = self.lattice_points.row(0);
        let last = self.lattice_points.row(n - 1);
        (
            (last[0] - first[0]) / (side - 1) as f64,
            (last[1] - first[1]) / (side - 1) as f64,
        )
    }
}

/// Deterministic fold labels: a seeded shuffle of the location indices
/// dealt round-robin, so fold sizes differ by at most one.
fn fold_assignments(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, Stream::Folds);
    indices.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (deal, &loc) in indices.iter().enumerate() {
        assignment[loc] = deal % folds;
    }
    assignment
}

fn subset(field: &FieldDataset, keep: &[usize], label: &str) -> Result<FieldDataset> {
    FieldDataset::new(
        keep.iter().map(|&i| field.locations()[i]).collect(),
        keep.iter().map(|&i| field.counts()[i]).collect(),
        keep.iter().map(|&i| field.exposures()[i]).collect(),
        keep.iter().map(|&i| field.backgrounds()[i]).collect(),
        label,
    )
}

/// Runs the fold study and returns the fold-averaged surfaces.
///
/// `fields` are concatenated into one dataset before splitting (the
/// year-by-year files of a multi-year campaign, say); counts must be
/// integers since the calibration is Poisson.
pub fn cv_crps_grid(
    fields: &[FieldDataset],
    corpus: &SimulatorCorpus,
    config: &CvConfig,
    out: Option<&Path>,
) -> Result<CvReport> {
    config.mcmc.validate()?;
    if config.folds < 2 {
        return Err(Error::validation(format!(
            "cross-validation needs at least 2 folds, got {}",
            config.folds
        )));
    }
    if config.param_grid < 2 || config.lattice < 2 {
        return Err(Error::validation("CRPS grids need at least 2 points per axis"));
    }
    if fields.is_empty() {
        return Err(Error::validation("give at least one field dataset"));
    }
    let domain = corpus.domain();
    if domain.dim() != 2 {
        return Err(Error::validation(format!(
            "the CRPS grid study is defined for two-parameter domains, got {}",
            domain.dim()
        )));
    }

    let mut locations = Vec::new();
    let mut counts = Vec::new();
    let mut exposures = Vec::new();
    let mut backgrounds = Vec::new();
    for f in fields {
        locations.extend_from_slice(f.locations());
        counts.extend_from_slice(f.counts());
        exposures.extend_from_slice(f.exposures());
        backgrounds.extend_from_slice(f.backgrounds());
    }
    let combined = FieldDataset::new(locations, counts, exposures, backgrounds, "cv")?;
    let n = combined.len();
    if n < config.folds {
        return Err(Error::validation(format!(
            "{n} locations cannot fill {} folds",
            config.folds
        )));
    }

    let stack = corpus.stack();
    let (surrogate, _fit) = fit_vecchia(&stack, config.m.min(stack.len()), config.fit_budget)?;
    let assignments = fold_assignments(n, config.folds, config.seed);

    let names = domain.names().to_vec();
    let grid1 = linspace(domain.lower()[0], domain.upper()[0], config.param_grid);
    let grid2 = linspace(domain.lower()[1], domain.upper()[1], config.param_grid);
    let axis1 = linspace(domain.lower()[0], domain.upper()[0], config.lattice);
    let axis2 = linspace(domain.lower()[1], domain.upper()[1], config.lattice);

    struct FoldOutcome {
        cell: CvFoldCell,
        surface1: Vec<f64>,
        surface2: Vec<f64>,
        lattice: Vec<f64>,
    }

    let outcomes: Vec<FoldOutcome> = (0..config.folds)
        .into_par_iter()
        .map(|fold| -> Result<FoldOutcome> {
            let held: Vec<usize> =
                (0..n).filter(|&i| assignments[i] == fold).collect();
            let train: Vec<usize> =
                (0..n).filter(|&i| assignments[i] != fold).collect();
            let train_data = subset(&combined, &train, &format!("cv-fold{fold}-train"))?;
            let held_data = subset(&combined, &held, &format!("cv-fold{fold}-held"))?;

            let problem = CalibrationProblem::sparse(
                &train_data,
                &surrogate,
                domain,
                LikelihoodMode::Poisson,
            )?;
            let mut mcmc = config.mcmc.clone();
            mcmc.seed = config.seed;
            mcmc.chain = fold as u64;
            let samples = metropolis_calibrate(&problem, &mcmc)?;
            let posterior_mean = samples.means();

            let predictor = FieldPredictor::new(&surrogate, held_data.locations())?;
            let crps_at = |u: &[f64]| -> Result<f64> {
                let rates = predictor.predict_means(&domain.normalize(u))?;
                let mut total = 0.0;
                for i in 0..held_data.len() {
                    let mean = ((rates[i] + held_data.backgrounds()[i])
                        * held_data.exposures()[i])
                        .max(MEAN_FLOOR);
                    total += crps_gaussian(mean, mean.sqrt(), held_data.counts()[i])?;
                }
                Ok(total / held_data.len() as f64)
            };

            let mut surface1 = Vec::with_capacity(grid1.len());
            for &u1 in &grid1 {
                surface1.push(crps_at(&[u1, posterior_mean[1]])?);
            }
            let mut surface2 = Vec::with_capacity(grid2.len());
            for &u2 in &grid2 {
                surface2.push(crps_at(&[posterior_mean[0], u2])?);
            }
            let mut lattice = Vec::with_capacity(axis1.len() * axis2.len());
            for &u1 in &axis1 {
                for &u2 in &axis2 {
                    lattice.push(crps_at(&[u1, u2])?);
                }
            }

            Ok(FoldOutcome {
                cell: CvFoldCell {
                    fold,
                    held_out: held.len(),
                    posterior_mean,
                    acceptance_u: samples.acceptance[0],
                    samples,
                },
                surface1,
                surface2,
                lattice,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let folds_f = config.folds as f64;
    let average = |pick: fn(&FoldOutcome) -> &Vec<f64>, len: usize| -> Vec<f64> {
        let mut sum = vec![0.0; len];
        for o in &outcomes {
            for (s, v) in sum.iter_mut().zip(pick(o)) {
                *s += v;
            }
        }
        sum.iter_mut().for_each(|s| *s /= folds_f);
        sum
    };
    let param1_crps = average(|o| &o.surface1, grid1.len());
    let param2_crps = average(|o| &o.surface2, grid2.len());
    let lattice_crps = average(|o| &o.lattice, axis1.len() * axis2.len());

    let mut lattice_points = Vec::with_capacity(axis1.len() * axis2.len() * 2);
    for &u1 in &axis1 {
        for &u2 in &axis2 {
            lattice_points.push(u1);
            lattice_points.push(u2);
        }
    }

    let report = CvReport {
        cells: outcomes.into_iter().map(|o| o.cell).collect(),
        assignments,
        names,
        param1_values: grid1,
        param1_crps,
        param2_values: grid2,
        param2_crps,
        lattice_points: RowMatrix::new(axis1.len() * axis2.len(), 2, lattice_points),
        lattice_crps,
    };

    if let Some(root) = out {
        write_outputs(&report, config, root)?;
    }
    Ok(report)
}

fn write_outputs(report: &CvReport, config: &CvConfig, root: &Path) -> Result<()> {
    let mut dir = OutputDir::create(root)?;
    dir.write_config_echo(config)?;

    let mut metrics = String::from("fold,held_out");
    for n in &report.names {
        metrics.push_str(&format!(",mean_{n}"));
    }
    metrics.push_str(",acceptance_u\n");
    for c in &report.cells {
        metrics.push_str(&format!("{},{}", c.fold, c.held_out));
        for v in &c.posterior_mean {
            metrics.push_str(&format!(",{v}"));
        }
        metrics.push_str(&format!(",{}\n", c.acceptance_u));
    }
    dir.write_text("metrics.csv", &metrics)?;

    let n1 = report.param1_values.len();
    write_crps_grid_csv(
        &dir.path_for("crps_param1.csv")?,
        &report.names[..1],
        &RowMatrix::new(n1, 1, report.param1_values.clone()),
        &report.param1_crps,
    )?;
    dir.record_file("crps_param1.csv")?;
    let n2 = report.param2_values.len();
    write_crps_grid_csv(
        &dir.path_for("crps_param2.csv")?,
        &report.names[1..],
        &RowMatrix::new(n2, 1, report.param2_values.clone()),
        &report.param2_crps,
    )?;
    dir.record_file("crps_param2.csv")?;
    write_crps_grid_csv(
        &dir.path_for("crps_lattice.csv")?,
        &report.names,
        &report.lattice_points,
        &report.lattice_crps,
    )?;
    dir.record_file("crps_lattice.csv")?;

    let mut assignment = String::from("location,fold\n");
    for (i, f) in report.assignments.iter().enumerate() {
        assignment.push_str(&format!("{i},{f}\n"));
    }
    dir.write_text("fold_assignments.csv", &assignment)?;

    for c in &report.cells {
        let rel = format!("folds/fold-{:02}/posterior.csv", c.fold);
        write_posterior_csv(&dir.path_for(&rel)?, &c.samples)?;
        dir.record_file(&rel)?;
    }
    dir.finish()?;
    Ok(())
}
