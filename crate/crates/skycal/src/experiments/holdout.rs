//! Hold-one-out benchmark: drop each simulator run in turn, fit on the
//! rest, predict the held-out map, and score accuracy and wall time per
//! method — the dense GP where feasible and the sparse surrogate at each
//! requested conditioning-set size.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Normalization, SimulatorCorpus};
use crate::diagnostics::{crps_gaussian, rmse};
use crate::error::{Error, Result};
use crate::gp::{ExactGP, DENSE_SIZE_CAP};
use crate::linalg::RowMatrix;
use crate::vecchia::fit_vecchia;

use super::OutputDir;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HoldoutConfig {
    /// Conditioning-set sizes to benchmark; values beyond the stacked size
    /// are clamped to exact conditioning (noted in the cell).
    pub m_values: Vec<usize>,
    /// Also run the dense GP, where the stacked size permits.
    pub include_dense: bool,
    /// Stacked-size limit above which the dense cells are skipped.
    pub dense_cap: usize,
    /// Objective-evaluation budget per sparse fitting stage.
    pub fit_budget: usize,
    /// Recorded in the echo; the benchmark itself draws no random numbers.
    pub seed: u64,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        HoldoutConfig {
            m_values: vec![25, 50, 75, 100],
            include_dense: true,
            dense_cap: DENSE_SIZE_CAP,
            fit_budget: 500,
            seed: 0,
        }
    }
}

/// One (held-out run, method) cell. Skipped cells carry NaN metrics and a
/// note saying why.
#[derive(Debug, Clone)]
pub struct HoldoutCell {
    pub held_out: usize,
    pub run_id: String,
    /// `"vecchia"` or `"dense"`.
    pub method: String,
    /// Requested conditioning-set size (sparse cells only).
    pub m: Option<usize>,
    pub rmse: f64,
    pub crps: f64,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub skipped: bool,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct HoldoutReport {
    pub cells: Vec<HoldoutCell>,
}

impl HoldoutReport {
    /// Mean (RMSE, CRPS) over the non-skipped cells of one method.
    pub fn aggregate(&self, method: &str, m: Option<usize>) -> Option<(f64, f64)> {
        let rows: Vec<&HoldoutCell> = self
            .cells
            .iter()
            .filter(|c| c.method == method && c.m == m && !c.skipped)
            .collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((
            rows.iter().map(|c| c.rmse).sum::<f64>() / n,
            rows.iter().map(|c| c.crps).sum::<f64>() / n,
        ))
    }
}

/// Normalized prediction inputs for one run's map: the grid's spatial
/// coordinates joined with the run's parameters.
fn heldout_inputs(
    corpus: &SimulatorCorpus,
    run: usize,
    normalization: &Normalization,
) -> RowMatrix {
    let n_grid = corpus.n_grid();
    let p = corpus.domain().dim();
    let u = corpus.design(run);
    let mut data = Vec::with_capacity(n_grid * (3 + p));
    for loc in corpus.grid() {
        let direction = loc.direction();
        for c in 0..3 {
            data.push(normalization.apply_column(c, direction[c]));
        }
        for (k, &v) in u.iter().enumerate() {
            data.push(normalization.apply_column(3 + k, v));
        }
    }
    RowMatrix::new(n_grid, 3 + p, data)
}

fn score(means: &[f64], sds: &[f64], actual: &[f64]) -> Result<(f64, f64)> {
    let r = rmse(means, actual)?;
    let mut crps = 0.0;
    for i in 0..actual.len() {
        crps += crps_gaussian(means[i], sds[i], actual[i])?;
    }
    Ok((r, crps / actual.len() as f64))
}

/// Runs the bakeoff over every held-out run, in parallel.
pub fn holdout_benchmark(
    corpus: &SimulatorCorpus,
    config: &HoldoutConfig,
    out: Option<&Path>,
) -> Result<HoldoutReport> {
    if corpus.n_runs() < 3 {
        return Err(Error::validation(format!(
            "the bakeoff needs at least 3 runs, got {}",
            corpus.n_runs()
        )));
    }
    if config.m_values.is_empty() {
        return Err(Error::validation("give at least one conditioning-set size"));
    }
    if config.m_values.contains(&0) {
        return Err(Error::validation("conditioning-set sizes must be at least 1"));
    }

    let per_run: Vec<Vec<HoldoutCell>> = (0..corpus.n_runs())
        .into_par_iter()
        .map(|r| bench_run(corpus, config, r))
        .collect::<Result<Vec<_>>>()?;
    let report = HoldoutReport {
        cells: per_run.into_iter().flatten().collect(),
    };

    if let Some(root) = out {
        write_outputs(&report, config, root)?;
    }
    Ok(report)
}

fn bench_run(corpus: &SimulatorCorpus, config: &HoldoutConfig, r: usize) -> Result<Vec<HoldoutCell>> {
    let training = corpus.without_run(r)?;
    let stack = training.stack();
    let n_stacked = stack.len();
    let xstar = heldout_inputs(corpus, r, stack.normalization());
    let actual = corpus.rates(r);
    let run_id = corpus.run_ids()[r].clone();

    let mut cells = Vec::new();
    let mut largest_fit = None;
    for &m in &config.m_values {
        // m = n conditions every training point on all its predecessors
        // and every prediction on the whole stack; larger m adds nothing.
        let m_eff = m.min(n_stacked);
        let started = Instant::now();
        let (surrogate, _report) = fit_vecchia(&stack, m_eff, config.fit_budget)?;
        let fit_seconds = started.elapsed().as_secs_f64();
        let started = Instant::now();
        let preds = surrogate.predict(&xstar)?;
        let predict_seconds = started.elapsed().as_secs_f64();
        let (rmse, crps) = score(&preds.means, &preds.sds, actual)?;
        let note = if m_eff != m {
            format!("m clamped to {m_eff} (stacked size {n_stacked})")
        } else {
            String::new()
        };
        if largest_fit.as_ref().map_or(true, |(prev, _)| m > *prev) {
            largest_fit = Some((m, surrogate.spec().clone()));
        }
        cells.push(HoldoutCell {
            held_out: r,
            run_id: run_id.clone(),
            method: "vecchia".to_string(),
            m: Some(m),
            rmse,
            crps,
            fit_seconds,
            predict_seconds,
            skipped: false,
            note,
        });
    }

    if config.include_dense {
        if n_stacked > config.dense_cap {
            cells.push(HoldoutCell {
                held_out: r,
                run_id,
                method: "dense".to_string(),
                m: None,
                rmse: f64::NAN,
                crps: f64::NAN,
                fit_seconds: f64::NAN,
                predict_seconds: f64::NAN,
                skipped: true,
                note: format!(
                    "dense GP skipped: {n_stacked} stacked rows exceed the cap {}",
                    config.dense_cap
                ),
            });
        } else {
            // The dense factorization is the cost that matters here; its
            // hyperparameters come from the largest sparse fit rather than
            // a separate (and much slower) dense search.
            let (largest_m, spec) = largest_fit.expect("at least one m value");
            let started = Instant::now();
            let gp = ExactGP::fit(spec, stack.inputs().clone(), stack.responses())?;
            let fit_seconds = started.elapsed().as_secs_f64();
            let started = Instant::now();
            let preds = gp.predict(&xstar);
            let predict_seconds = started.elapsed().as_secs_f64();
            let (rmse, crps) = score(&preds.means, &preds.sds, actual)?;
            cells.push(HoldoutCell {
                held_out: r,
                run_id,
                method: "dense".to_string(),
                m: None,
                rmse,
                crps,
                fit_seconds,
                predict_seconds,
                skipped: false,
                note: format!("hyperparameters reused from the m={largest_m} fit"),
            });
        }
    }
    Ok(cells)
}

fn write_outputs(report: &HoldoutReport, config: &HoldoutConfig, root: &Path) -> Result<()> {
    let mut dir = OutputDir::create(root)?;
    dir.write_config_echo(config)?;

    let mut metrics = String::from("held_out,run_id,method,m,rmse,crps,skipped,note\n");
    let mut timings = String::from("held_out,method,m,fit_seconds,predict_seconds\n");
    for c in &report.cells {
        let m = c.m.map(|m| m.to_string()).unwrap_or_default();
        let rmse = if c.rmse.is_nan() { String::new() } else { c.rmse.to_string() };
        let crps = if c.crps.is_nan() { String::new() } else { c.crps.to_string() };
        metrics.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.held_out,
            c.run_id,
            c.method,
            m,
            rmse,
            crps,
            u8::from(c.skipped),
            c.note
        ));
        if !c.skipped {
            timings.push_str(&format!(
                "{},{},{},{},{}\n",
                c.held_out, c.method, m, c.fit_seconds, c.predict_seconds
            ));
        }
    }
    dir.write_text("metrics.csv", &metrics)?;
    dir.write_wall_clock_text("timings.csv", &timings)?;
    dir.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ToyProblem;

    #[test]
    fn exact_conditioning_matches_the_dense_gp() {
        // m clamped to the full predecessor set makes the sparse factor
        // exact, and the dense cell reuses the same hyperparameters, so
        // the two methods are the same model.
        let corpus = ToyProblem::lhs_corpus(8, 24, 3).unwrap();
        let config = HoldoutConfig {
            m_values: vec![10_000],
            fit_budget: 60,
            ..HoldoutConfig::default()
        };
        let report = holdout_benchmark(&corpus, &config, None).unwrap();
        assert_eq!(report.cells.len(), 16);
        for r in 0..8 {
            let sparse = &report.cells[2 * r];
            let dense = &report.cells[2 * r + 1];
            assert_eq!(sparse.method, "vecchia");
            assert!(sparse.note.contains("clamped"));
            assert_eq!(dense.method, "dense");
            assert!(
                (sparse.rmse - dense.rmse).abs() <= 1e-6,
                "run {r}: sparse {} vs dense {}",
                sparse.rmse,
                dense.rmse
            );
            assert!((sparse.crps - dense.crps).abs() <= 1e-6);
        }
    }

    #[test]
    fn standard_neighborhood_sizes_are_supported() {
        // Training stacks of 4 x 26 = 104 rows admit every m up to 103.
        let corpus = ToyProblem::lhs_corpus(5, 26, 9).unwrap();
        let config = HoldoutConfig {
            m_values: vec![25, 50, 75, 100],
            include_dense: false,
            fit_budget: 30,
            ..HoldoutConfig::default()
        };
        let report = holdout_benchmark(&corpus, &config, None).unwrap();
        assert_eq!(report.cells.len(), 20);
        for c in &report.cells {
            assert!(c.note.is_empty(), "unexpected clamp: {}", c.note);
            assert!(c.rmse.is_finite() && c.crps.is_finite());
            assert!(c.rmse >= 0.0 && c.crps >= 0.0);
        }
        for m in [25, 50, 75, 100] {
            assert!(report.aggregate("vecchia", Some(m)).is_some());
        }
    }

    #[test]
    fn dense_cells_are_skipped_over_the_cap() {
        let corpus = ToyProblem::lhs_corpus(4, 30, 1).unwrap();
        let config = HoldoutConfig {
            m_values: vec![20],
            dense_cap: 50,
            fit_budget: 30,
            ..HoldoutConfig::default()
        };
        let report = holdout_benchmark(&corpus, &config, None).unwrap();
        let dense: Vec<&HoldoutCell> =
            report.cells.iter().filter(|c| c.method == "dense").collect();
        assert_eq!(dense.len(), 4);
        for c in dense {
            assert!(c.skipped);
            assert!(c.note.contains("exceed the cap"));
            assert!(c.rmse.is_nan());
        }
        assert!(report.aggregate("dense", None).is_none());
    }

    #[test]
    fn small_neighborhoods_stay_close_to_dense() {
        let corpus = ToyProblem::lhs_corpus(10, 80, 21).unwrap();
        let config = HoldoutConfig {
            m_values: vec![25],
            fit_budget: 60,
            ..HoldoutConfig::default()
        };
        let report = holdout_benchmark(&corpus, &config, None).unwrap();
        let (rmse_sparse, crps_sparse) = report.aggregate("vecchia", Some(25)).unwrap();
        let (rmse_dense, crps_dense) = report.aggregate("dense", None).unwrap();
        assert!(
            rmse_sparse <= 1.05 * rmse_dense,
            "m=25 RMSE {rmse_sparse} more than 5% above dense {rmse_dense}"
        );
        assert!(
            crps_sparse <= 1.10 * crps_dense,
            "m=25 CRPS {crps_sparse} more than 10% above dense {crps_dense}"
        );
    }

    #[test]
    fn outputs_are_deterministic_apart_from_timings() {
        let corpus = ToyProblem::lhs_corpus(4, 16, 2).unwrap();
        let config = HoldoutConfig {
            m_values: vec![15],
            fit_budget: 30,
            ..HoldoutConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        holdout_benchmark(&corpus, &config, Some(&a)).unwrap();
        holdout_benchmark(&corpus, &config, Some(&b)).unwrap();
        for rel in ["config_echo", "metrics.csv", "MANIFEST"] {
            let left = std::fs::read(a.join(rel)).unwrap();
            let right = std::fs::read(b.join(rel)).unwrap();
            assert_eq!(left, right, "{rel} differs between identical runs");
        }
        assert!(a.join("timings.csv").is_file());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let small = ToyProblem::lhs_corpus(2, 8, 0).unwrap();
        let config = HoldoutConfig::default();
        assert!(holdout_benchmark(&small, &config, None).is_err());

        let corpus = ToyProblem::lhs_corpus(4, 8, 0).unwrap();
        let empty = HoldoutConfig {
            m_values: vec![],
            ..HoldoutConfig::default()
        };
        assert!(holdout_benchmark(&corpus, &empty, None).is_err());
        let zero = HoldoutConfig {
            m_values: vec![0],
            ..HoldoutConfig::default()
        };
        assert!(holdout_benchmark(&corpus, &zero, None).is_err());
    }
}
