//! Fast repeated prediction at fixed sky locations while the parameter
//! vector sweeps — the inner loop of MCMC calibration.
//!
//! The stacked training design is a product: every run shares one grid, so
//! the scaled distance from a query (field location x, parameters u) to
//! training row (run r, grid point g) splits into a u-independent spatial
//! part and a grid-independent parameter part. For each field location and
//! each run, the m spatially-nearest grid rows are precomputed once
//! (including the run's own position tie order); a proposal then only
//! scores n_runs·m candidates per location instead of searching the full
//! stack. The selected set — and therefore every predicted number — is
//! identical to the tree-search path, ties included.

use rayon::prelude::*;

use crate::data::SpatialLocation;
use crate::error::{Error, Result};
use crate::gp::PredictiveSummary;
use crate::linalg::RowMatrix;
use crate::vecchia::VecchiaSurrogate;

/// One precomputed candidate: stack position and its spatial distance part.
#[derive(Debug, Clone, Copy)]
struct SpatialCand {
    pos: usize,
    d2: f64,
}

/// Prediction accelerator for a fixed set of field locations.
pub struct FieldPredictor<'a> {
    surrogate: &'a VecchiaSurrogate,
    /// Normalized spatial coordinates per field location (n_F x 3).
    field_coords: RowMatrix,
    /// Candidate lists, indexed `i * n_runs + r`, each holding run r's
    /// min(m, n_grid) spatially-nearest rows for field location i in the
    /// run's own (distance, position) tie order.
    candidates: Vec<Vec<SpatialCand>>,
    /// Normalized parameter vector per run (n_runs x p).
    run_params: RowMatrix,
}

impl<'a> FieldPredictor<'a> {
    pub fn new(surrogate: &'a VecchiaSurrogate, locations: &[SpatialLocation]) -> Result<Self> {
        let d = surrogate.dim();
        if d < 4 {
            return Err(Error::validation(
                "field prediction needs a (3 spatial + parameters) surrogate",
            ));
        }
        let p = d - 3;
        let n_runs = surrogate.n_runs();
        let n_grid = surrogate.n_grid();
        let n = surrogate.n_train();
        if n_runs * n_grid != n {
            return Err(Error::validation(
                "surrogate training stack lost its run x grid structure",
            ));
        }
        let n_f = locations.len();
        if n_f == 0 {
            return Err(Error::validation("no field locations to predict at"));
        }
        let norm = surrogate.normalization();
        let m = surrogate.m().min(n);

        // Normalized field coordinates.
        let mut fc = vec![0.0; n_f * 3];
        for (i, loc) in locations.iter().enumerate() {
            let dir = loc.direction();
            for c in 0..3 {
                fc[i * 3 + c] = norm.apply_column(c, dir[c]);
            }
        }
        let field_coords = RowMatrix::new(n_f, 3, fc);

        // Invert the ordering: original stacked row -> ordered position.
        let perm = surrogate.ordering().perm();
        let mut inv = vec![0usize; n];
        for (k, &orig) in perm.iter().enumerate() {
            inv[orig] = k;
        }

        // Per-run parameters and the shared grid coordinates, both read back
        // from the ordered inputs (normalized units).
        let ordered = surrogate.ordered_inputs();
        let mut rp = vec![0.0; n_runs * p];
        for r in 0..n_runs {
            let row = ordered.row(inv[r * n_grid]);
            rp[r * p..(r + 1) * p].copy_from_slice(&row[3..]);
        }
        let run_params = RowMatrix::new(n_runs, p, rp);
        let mut grid_coords = vec![0.0; n_grid * 3];
        for g in 0..n_grid {
            let row = ordered.row(inv[g]);
            grid_coords[g * 3..g * 3 + 3].copy_from_slice(&row[..3]);
        }

        let scales = surrogate.build_scales();
        let per_run = m.min(n_grid);
        let cmp = |a: &SpatialCand, b: &SpatialCand| {
            a.d2.partial_cmp(&b.d2).unwrap().then(a.pos.cmp(&b.pos))
        };
        let per_location: Vec<Vec<Vec<SpatialCand>>> = (0..n_f)
            .into_par_iter()
            .map(|i| {
                let fx = field_coords.row(i);
                // Spatial distance part to every grid point, shared by all
                // runs of this field location.
                let spatial: Vec<f64> = (0..n_grid)
                    .map(|g| {
                        let mut s = 0.0;
                        for c in 0..3 {
                            let t = (fx[c] - grid_coords[g * 3 + c]) / scales[c];
                            s += t * t;
                        }
                        s
                    })
                    .collect();
                (0..n_runs)
                    .map(|r| {
                        let mut cands: Vec<SpatialCand> = (0..n_grid)
                            .map(|g| SpatialCand {
                                pos: inv[r * n_grid + g],
                                d2: spatial[g],
                            })
                            .collect();
                        if per_run < cands.len() {
                            cands.select_nth_unstable_by(per_run, cmp);
                            cands.truncate(per_run);
                        }
                        cands.sort_by(cmp);
                        cands
                    })
                    .collect()
            })
            .collect();
        let candidates: Vec<Vec<SpatialCand>> = per_location.into_iter().flatten().collect();

        Ok(FieldPredictor {
            surrogate,
            field_coords,
            candidates,
            run_params,
        })
    }

    pub fn n_locations(&self) -> usize {
        self.field_coords.n_rows()
    }

    /// Predictive mean/sd at every field location for one normalized
    /// parameter vector. Bit-identical to assembling the (location, u) rows
    /// and calling [`VecchiaSurrogate::predict`].
    pub fn predict(&self, u_normalized: &[f64]) -> Result<PredictiveSummary> {
        let p = self.run_params.n_cols();
        if u_normalized.len() != p {
            return Err(Error::validation(format!(
                "parameter vector has {} entries, surrogate expects {p}",
                u_normalized.len()
            )));
        }
        let scales = self.surrogate.build_scales();
        let n_runs = self.run_params.n_rows();
        // Parameter distance part per run.
        let param_d2: Vec<f64> = (0..n_runs)
            .map(|r| {
                let row = self.run_params.row(r);
                let mut s = 0.0;
                for c in 0..p {
                    let t = (u_normalized[c] - row[c]) / scales[3 + c];
                    s += t * t;
                }
                s
            })
            .collect();

        let m = self.surrogate.m().min(self.surrogate.n_train());
        let n_f = self.n_locations();
        let pairs: Result<Vec<(f64, f64)>> = (0..n_f)
            .into_par_iter()
            .map(|i| {
                // Select the m best (total distance, position) among each
                // run's precomputed spatial candidates.
                let mut heap: std::collections::BinaryHeap<(OrdCand, usize)> =
                    std::collections::BinaryHeap::with_capacity(m + 1);
                for r in 0..n_runs {
                    for c in &self.candidates[i * n_runs + r] {
                        let cand = (
                            OrdCand {
                                d2: c.d2 + param_d2[r],
                            },
                            c.pos,
                        );
                        if heap.len() < m {
                            heap.push(cand);
                        } else if let Some(worst) = heap.peek() {
                            if cand < *worst {
                                heap.pop();
                                heap.push(cand);
                            }
                        }
                    }
                }
                let mut set: Vec<usize> = heap.into_iter().map(|(_, pos)| pos).collect();
                set.sort_unstable();

                let mut query = vec![0.0; 3 + p];
                query[..3].copy_from_slice(self.field_coords.row(i));
                query[3..].copy_from_slice(u_normalized);
                let (mean, var) = super::kriging_from_set(
                    self.surrogate.spec(),
                    self.surrogate.ordered_inputs(),
                    self.surrogate.ordered_centered(),
                    &set,
                    &query,
                )?;
                Ok((mean + self.surrogate.response_mean(), var.sqrt()))
            })
            .collect();
        let pairs = pairs?;
        Ok(PredictiveSummary {
            means: pairs.iter().map(|x| x.0).collect(),
            sds: pairs.iter().map(|x| x.1).collect(),
        })
    }

    /// Means only — what the Poisson likelihood consumes.
    pub fn predict_means(&self, u_normalized: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(u_normalized)?.means)
    }

    /// The normalized (location, u) input rows this predictor evaluates —
    /// lets tests and callers reproduce its answers through the slow path.
    pub fn query_rows(&self, u_normalized: &[f64]) -> RowMatrix {
        let p = self.run_params.n_cols();
        let n_f = self.n_locations();
        let mut data = vec![0.0; n_f * (3 + p)];
        for i in 0..n_f {
            data[i * (3 + p)..i * (3 + p) + 3].copy_from_slice(self.field_coords.row(i));
            data[i * (3 + p) + 3..(i + 1) * (3 + p)].copy_from_slice(u_normalized);
        }
        RowMatrix::new(n_f, 3 + p, data)
    }
}

/// Total-distance candidate with the lexicographic (distance, position)
/// order used everywhere; paired with the position in the heap tuple so the
/// comparison matches the tree search exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdCand {
    d2: f64,
}

impl Eq for OrdCand {}

impl PartialOrd for OrdCand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdCand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d2.partial_cmp(&other.d2).unwrap()
    }
}
