//! Simulator corpora: a design of parameter runs crossed with a shared sky
//! grid, with one rate map per run.

use crate::data::domain::ParameterDomain;
use crate::data::location::SpatialLocation;
use crate::data::stacked::{Normalization, StackedDesign};
use crate::error::{Error, Result};
use crate::linalg::RowMatrix;

/// A set of simulator runs: `n_runs` parameter vectors, each evaluated on the
/// same `n_grid` sky locations, producing an `n_runs x n_grid` rate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorCorpus {
    domain: ParameterDomain,
    run_ids: Vec<String>,
    /// n_runs x p parameter vectors, raw units.
    designs: RowMatrix,
    grid: Vec<SpatialLocation>,
    /// n_runs x n_grid rates, row i = the map produced by run i.
    rates: RowMatrix,
}

impl SimulatorCorpus {
    pub fn new(
        domain: ParameterDomain,
        run_ids: Vec<String>,
        designs: RowMatrix,
        grid: Vec<SpatialLocation>,
        rates: RowMatrix,
    ) -> Result<Self> {
        let n_runs = designs.n_rows();
        let n_grid = grid.len();
        if n_runs == 0 || n_grid == 0 {
            return Err(Error::validation("corpus needs at least one run and one grid point"));
        }
        if designs.n_cols() != domain.dim() {
            return Err(Error::validation(format!(
                "design has {} parameters but domain has {}",
                designs.n_cols(),
                domain.dim()
            )));
        }
        if run_ids.len() != n_runs {
            return Err(Error::validation(format!(
                "{} run ids for {} design rows",
                run_ids.len(),
                n_runs
            )));
        }
        if rates.n_rows() != n_runs || rates.n_cols() != n_grid {
            return Err(Error::validation(format!(
                "rate matrix is {}x{}; expected {}x{}",
                rates.n_rows(),
                rates.n_cols(),
                n_runs,
                n_grid
            )));
        }
        for i in 0..n_runs {
            if !domain.contains(designs.row(i)) {
                return Err(Error::validation(format!(
                    "design row for run '{}' lies outside the parameter domain",
                    run_ids[i]
                )));
            }
        }
        for (k, &r) in rates.data().iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::validation(format!(
                    "rate for run '{}' at grid index {} is {r}; expected a finite nonnegative rate",
                    run_ids[k / n_grid],
                    k % n_grid
                )));
            }
        }
        Ok(SimulatorCorpus {
            domain,
            run_ids,
            designs,
            grid,
            rates,
        })
    }

    pub fn domain(&self) -> &ParameterDomain {
        &self.domain
    }

    pub fn n_runs(&self) -> usize {
        self.designs.n_rows()
    }

    pub fn n_grid(&self) -> usize {
        self.grid.len()
    }

    /// Stacked training size n_runs x n_grid.
    pub fn n_stacked(&self) -> usize {
        self.n_runs() * self.n_grid()
    }

    pub fn run_ids(&self) -> &[String] {
        &self.run_ids
    }

    pub fn design(&self, run: usize) -> &[f64] {
        self.designs.row(run)
    }

    pub fn designs(&self) -> &RowMatrix {
        &self.designs
    }

    pub fn grid(&self) -> &[SpatialLocation] {
        &self.grid
    }

    pub fn rates(&self, run: usize) -> &[f64] {
        self.rates.row(run)
    }

    /// Copy of the corpus without the given run — the holdout primitive.
    pub fn without_run(&self, run: usize) -> Result<SimulatorCorpus> {
        if run >= self.n_runs() {
            return Err(Error::validation(format!(
                "run index {run} out of range 0..{}",
                self.n_runs()
            )));
        }
        if self.n_runs() == 1 {
            return Err(Error::validation("cannot drop the only run in a corpus"));
        }
        let keep: Vec<usize> = (0..self.n_runs()).filter(|&i| i != run).collect();
        SimulatorCorpus::new(
            self.domain.clone(),
            keep.iter().map(|&i| self.run_ids[i].clone()).collect(),
            self.designs.select_rows(&keep),
            self.grid.clone(),
            self.rates.select_rows(&keep),
        )
    }

    /// Flattens the corpus into the normalized (spatial + parameter) training
    /// stack: row (i, j) is grid point j of run i, runs outer, grid inner.
    pub fn stack(&self) -> StackedDesign {
        let n_runs = self.n_runs();
        let n_grid = self.n_grid();
        let p = self.domain.dim();
        let d = 3 + p;
        let normalization = Normalization::for_domain(&self.domain);

        let mut inputs = RowMatrix::zeros(n_runs * n_grid, d);
        let mut responses = Vec::with_capacity(n_runs * n_grid);
        let mut raw = vec![0.0; d];
        for i in 0..n_runs {
            let u = self.designs.row(i);
            for j in 0..n_grid {
                let dir = self.grid[j].direction();
                raw[..3].copy_from_slice(&dir);
                raw[3..].copy_from_slice(u);
                let row = inputs.row_mut(i * n_grid + j);
                normalization.apply(&raw, row);
                responses.push(self.rates.row(i)[j]);
            }
        }
        StackedDesign::new(inputs, responses, normalization, n_runs, n_grid)
    }
}
