//! Wall-clock scaling sweeps: time fit + full-map predict on toy corpora
//! of growing size and report the log-log slope per method.
//!
//! Cells run one at a time so their (internally parallel) work never
//! overlaps; the measured quantity is the wall time of one fit plus one
//! full-map prediction, averaged over repetitions. Cells whose dense
//! factorization would exceed the size cap are censored up front without
//! being attempted, and a per-cell timeout censors anything slower than
//! the caller is willing to wait for.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::SimulatorCorpus;
use crate::error::{Error, Result};
use crate::gp::{fit_mle_dense, ExactGP, DENSE_SIZE_CAP};
use crate::kernel::KernelSpec;
use crate::linalg::RowMatrix;
use crate::vecchia::{fit_vecchia, DEFAULT_M};

use super::{OutputDir, ToyProblem};

/// Which corpus dimension the sweep grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Grid points per run grow; the run count stays at `fixed_runs`.
    ResponseDimension,
    /// Runs grow; the grid stays at `fixed_grid` points.
    RunCount,
}

fn axis_label(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::ResponseDimension => "response_dimension",
        SweepAxis::RunCount => "run_count",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub axis: SweepAxis,
    /// Sweep sizes, strictly ascending.
    pub sizes: Vec<usize>,
    /// One sparse cell per size per conditioning-set size.
    pub m_values: Vec<usize>,
    pub repetitions: usize,
    pub include_dense: bool,
    /// Stacked-row limit beyond which dense cells are censored unrun.
    pub dense_cap: usize,
    pub fixed_runs: usize,
    pub fixed_grid: usize,
    pub fit_budget: usize,
    /// Cumulative per-cell budget; a cell that exceeds it mid-run stops
    /// and is marked censored.
    pub timeout_seconds: Option<f64>,
    /// Seeds the Latin hypercube designs only — the timed work draws
    /// no random numbers.
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            axis: SweepAxis::ResponseDimension,
            sizes: vec![1_000, 2_000, 4_000, 8_000, 16_000],
            m_values: vec![DEFAULT_M],
            repetitions: 5,
            include_dense: false,
            dense_cap: DENSE_SIZE_CAP,
            fixed_runs: 20,
            fixed_grid: 1_000,
            fit_budget: 60,
            timeout_seconds: None,
            seed: 0,
        }
    }
}

/// One (size, method) measurement.
#[derive(Debug, Clone)]
pub struct TimingCell {
    pub size: usize,
    pub n_runs: usize,
    pub n_grid: usize,
    pub n_stacked: usize,
    /// "vecchia" or "dense".
    pub method: String,
    pub m: Option<usize>,
    pub repetitions_run: usize,
    /// Mean seconds over the completed repetitions; absent when censored.
    pub mean_seconds: Option<f64>,
    pub censored: bool,
    /// Censored before running because the stack exceeds the dense cap.
    pub cap_censored: bool,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct TimingReport {
    pub axis: SweepAxis,
    pub cells: Vec<TimingCell>,
}

impl TimingReport {
    /// Log-log slope of mean seconds against sweep size for one method,
    /// over its uncensored cells.
    pub fn slope(&self, method: &str, m: Option<usize>) -> Result<f64> {
        let mut sizes = Vec::new();
        let mut times = Vec::new();
        for c in &self.cells {
            if c.method == method && c.m == m && !c.censored {
                if let Some(t) = c.mean_seconds {
                    sizes.push(c.size as f64);
                    times.push(t);
                }
            }
        }
        if sizes.len() < 2 {
            return Err(Error::validation(format!(
                "slope for {method} (m = {m:?}) needs at least 2 uncensored cells, have {}",
                sizes.len()
            )));
        }
        log_log_slope(&sizes, &times)
    }
}

/// Least-squares slope of `ln(seconds)` on `ln(size)`.
pub fn log_log_slope(sizes: &[f64], seconds: &[f64]) -> Result<f64> {
    if sizes.len() != seconds.len() || sizes.len() < 2 {
        return Err(Error::validation(
            "slope needs matching size/time vectors with at least 2 entries",
        ));
    }
    if sizes
        .iter()
        .chain(seconds)
        .any(|v| !v.is_finite() || *v <= 0.0)
    {
        return Err(Error::validation(
            "slope needs strictly positive finite sizes and times",
        ));
    }
    let lx: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = seconds.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(Error::validation("slope is undefined when all sizes coincide"));
    }
    Ok(num / den)
}

fn validate(config: &TimingConfig) -> Result<()> {
    if config.sizes.is_empty() {
        return Err(Error::validation("the sweep needs at least one size"));
    }
    if config.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("sweep sizes must be strictly ascending"));
    }
    if config.m_values.iter().any(|&m| m == 0) {
        return Err(Error::validation("conditioning sets must be non-empty"));
    }
    if config.m_values.is_empty() && !config.include_dense {
        return Err(Error::validation(
            "nothing to time: give m_values or set include_dense",
        ));
    }
    if config.repetitions == 0 {
        return Err(Error::validation("repetitions must be at least 1"));
    }
    let min_size = *config.sizes.first().unwrap();
    let (min_runs, min_grid) = match config.axis {
        SweepAxis::ResponseDimension => (config.fixed_runs, min_size),
        SweepAxis::RunCount => (min_size, config.fixed_grid),
    };
    if min_runs < 2 || min_grid < 2 {
        return Err(Error::validation(format!(
            "the smallest sweep cell has {min_runs} runs x {min_grid} grid points; both must be at least 2"
        )));
    }
    Ok(())
}

/// Full-map prediction rows at the domain center: every grid point's
/// normalized spatial coordinates joined with the normalized center.
fn center_map(corpus: &SimulatorCorpus) -> RowMatrix {
    let stack = corpus.stack();
    let n_grid = corpus.n_grid();
    let p = corpus.domain().dim();
    let mut rows = Vec::with_capacity(n_grid * (3 + p));
    for g in 0..n_grid {
        rows.extend_from_slice(&stack.inputs().row(g)[..3]);
        rows.extend_from_slice(&vec![0.5; p]);
    }
    RowMatrix::new(n_grid, 3 + p, rows)
}

/// Times the completed repetitions of `work`, stopping early when the
/// cumulative cell time passes the timeout. Returns (seconds per rep,
/// censored).
fn run_reps<F: FnMut() -> Result<()>>(
    repetitions: usize,
    timeout: Option<f64>,
    mut work: F,
) -> Result<(Vec<f64>, bool)> {
    let mut times = Vec::with_capacity(repetitions);
    let mut total = 0.0;
    for _ in 0..repetitions {
        let start = Instant::now();
        work()?;
        let dt = start.elapsed().as_secs_f64();
        times.push(dt);
        total += dt;
        if let Some(cap) = timeout {
            if total > cap {
                return Ok((times, true));
            }
        }
    }
    Ok((times, false))
}

fn finish_cell(mut cell: TimingCell, times: Vec<f64>, timed_out: bool) -> TimingCell {
    cell.repetitions_run = times.len();
    if timed_out {
        cell.censored = true;
        cell.note = format!(
            "timed out after {} repetition(s)",
            times.len()
        );
    } else {
        cell.mean_seconds = Some(times.iter().sum::<f64>() / times.len() as f64);
    }
    cell
}

/// Runs the sweep. Cells execute sequentially — a timing cell must own
/// the machine while it runs — in ascending size order, sparse cells
/// before the dense one at each size.
pub fn timing_sweep(config: &TimingConfig, out: Option<&Path>) -> Result<TimingReport> {
    validate(config)?;
    let mut cells = Vec::new();
    for &size in &config.sizes {
        let (n_runs, n_grid) = match config.axis {
            SweepAxis::ResponseDimension => (config.fixed_runs, size),
            SweepAxis::RunCount => (size, config.fixed_grid),
        };
        let corpus = ToyProblem::lhs_corpus(n_runs, n_grid, config.seed)?;
        let stack = corpus.stack();
        let n_stacked = stack.len();
        let xstar = center_map(&corpus);
        let blank = |method: &str, m: Option<usize>| TimingCell {
            size,
            n_runs,
            n_grid,
            n_stacked,
            method: method.into(),
            m,
            repetitions_run: 0,
            mean_seconds: None,
            censored: false,
            cap_censored: false,
            note: String::new(),
        };

        for &m in &config.m_values {
            let m_eff = m.min(n_stacked);
            let mut cell = blank("vecchia", Some(m));
            if m_eff < m {
                cell.note = format!("m clamped to {m_eff} (stacked size {n_stacked})");
            }
            let (times, timed_out) = run_reps(config.repetitions, config.timeout_seconds, || {
                let (surrogate, _) = fit_vecchia(&stack, m_eff, config.fit_budget)?;
                surrogate.predict(&xstar)?;
                Ok(())
            })?;
            cells.push(finish_cell(cell, times, timed_out));
        }

        if config.include_dense {
            let mut cell = blank("dense", None);
            if n_stacked > config.dense_cap {
                cell.censored = true;
                cell.cap_censored = true;
                cell.note = format!(
                    "dense fit on {n_stacked} stacked rows exceeds the cap {}; not attempted",
                    config.dense_cap
                );
                cells.push(cell);
            } else {
                let init = KernelSpec::unit(stack.dim());
                let (times, timed_out) =
                    run_reps(config.repetitions, config.timeout_seconds, || {
                        let (spec, _) = fit_mle_dense(
                            stack.inputs(),
                            stack.responses(),
                            &init,
                            config.fit_budget,
                            config.dense_cap,
                        )?;
                        let gp =
                            ExactGP::fit(spec, stack.inputs().clone(), stack.responses())?;
                        gp.predict(&xstar);
                        Ok(())
                    })?;
                cells.push(finish_cell(cell, times, timed_out));
            }
        }
    }

    let report = TimingReport {
        axis: config.axis,
        cells,
    };
    if let Some(root) = out {
        write_outputs(&report, config, root)?;
    }
    Ok(report)
}

fn write_outputs(report: &TimingReport, config: &TimingConfig, root: &Path) -> Result<()> {
    let mut dir = OutputDir::create(root)?;
    dir.write_config_echo(config)?;

    // Everything wall-clock dependent lives in timings.csv; this file
    // stays byte-identical across reruns.
    let mut metrics = String::from("axis,size,n_runs,n_grid,n_stacked,method,m,cap_censored\n");
    for c in &report.cells {
        metrics.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            axis_label(report.axis),
            c.size,
            c.n_runs,
            c.n_grid,
            c.n_stacked,
            c.method,
            c.m.map(|m| m.to_string()).unwrap_or_default(),
            c.cap_censored,
        ));
    }
    dir.write_text("metrics.csv", &metrics)?;

    let mut timings =
        String::from("size,method,m,repetitions_run,mean_seconds,censored,note\n");
    for c in &report.cells {
        timings.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.size,
            c.method,
            c.m.map(|m| m.to_string()).unwrap_or_default(),
            c.repetitions_run,
            c.mean_seconds.map(|t| t.to_string()).unwrap_or_default(),
            c.censored,
            c.note,
        ));
    }
    dir.write_wall_clock_text("timings.csv", &timings)?;
    dir.finish()?;
    Ok(())
}
