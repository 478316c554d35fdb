//! Surrogate persistence. The file carries hyperparameters and geometry
//! metadata only — ordering permutation, conditioning-set size, build
//! scales — and is bound to its training stack by a content hash. Loading
//! rebuilds conditioning sets and the search tree from the stack, which is
//! cheaper than storing them and guarantees the reloaded surrogate cannot
//! silently pair old geometry with new data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::StackedDesign;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::vecchia::order::{OrderMethod, Ordering};
use crate::vecchia::VecchiaSurrogate;

/// Format version written by [`VecchiaSurrogate::save`].
const FORMAT_VERSION: u32 = 1;

/// Hex SHA-256 digest of a training stack: dimensions, normalization
/// bounds, and the exact bit patterns of every input and response. Two
/// stacks hash equal iff they would produce bit-identical surrogates.
pub fn stacked_sha256(design: &StackedDesign) -> String {
    let mut h = Sha256::new();
    let push_u64 = |h: &mut Sha256, v: u64| h.update(v.to_le_bytes());
    let push_f64s = |h: &mut Sha256, vs: &[f64]| {
        for &v in vs {
            h.update(v.to_bits().to_le_bytes());
        }
    };
    push_u64(&mut h, design.len() as u64);
    push_u64(&mut h, design.dim() as u64);
    push_u64(&mut h, design.n_runs() as u64);
    push_u64(&mut h, design.n_grid() as u64);
    let (lo, hi) = design.normalization().bounds();
    push_f64s(&mut h, lo);
    push_f64s(&mut h, hi);
    push_f64s(&mut h, design.inputs().data());
    push_f64s(&mut h, design.responses());
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// On-disk representation of a fitted surrogate.
#[derive(Debug, Serialize, Deserialize)]
struct SurrogateFile {
    version: u32,
    kernel: KernelSpec,
    m: usize,
    build_scales: Vec<f64>,
    order_method: OrderMethod,
    ordering: Vec<usize>,
    response_mean: f64,
    n_runs: usize,
    n_grid: usize,
    training_sha256: String,
}

impl VecchiaSurrogate {
    /// Writes the surrogate to `path` as JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = SurrogateFile {
            version: FORMAT_VERSION,
            kernel: self.spec().clone(),
            m: self.m(),
            build_scales: self.build_scales().to_vec(),
            order_method: self.ordering().method(),
            ordering: self.ordering().perm().to_vec(),
            response_mean: self.response_mean(),
            n_runs: self.n_runs(),
            n_grid: self.n_grid(),
            training_sha256: self.training_hash().to_string(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::validation(format!("surrogate serialization failed: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reloads a surrogate from `path`, rebuilding its conditioning sets
    /// and search tree from `design`. Fails if the file's format version is
    /// unknown, its training hash does not match `design`, or its geometry
    /// metadata is inconsistent with the stack.
    pub fn load(path: &Path, design: &StackedDesign) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: SurrogateFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: format!("invalid surrogate JSON: {e}"),
        })?;
        let fail = |message: String| Error::Format {
            path: path.display().to_string(),
            message,
        };
        if file.version != FORMAT_VERSION {
            return Err(fail(format!(
                "unsupported surrogate format version {} (supported: {FORMAT_VERSION})",
                file.version
            )));
        }
        let hash = stacked_sha256(design);
        if file.training_sha256 != hash {
            return Err(fail(format!(
                "training-data hash mismatch: file was fit to {}, supplied stack is {hash}",
                file.training_sha256
            )));
        }
        if file.n_runs != design.n_runs() || file.n_grid != design.n_grid() {
            return Err(fail(format!(
                "stack shape mismatch: file says {} runs x {} grid points, stack has {} x {}",
                file.n_runs,
                file.n_grid,
                design.n_runs(),
                design.n_grid()
            )));
        }
        if file.build_scales.len() != design.dim() {
            return Err(fail(format!(
                "build scales have {} entries for a {}-dimensional stack",
                file.build_scales.len(),
                design.dim()
            )));
        }
        if file.ordering.len() != design.len() {
            return Err(fail(format!(
                "ordering has {} entries for a stack of {} rows",
                file.ordering.len(),
                design.len()
            )));
        }
        let ordering = Ordering::from_perm(file.ordering, file.order_method)?;
        let surrogate =
            VecchiaSurrogate::assemble(file.kernel, design, ordering, file.m, file.build_scales)?;
        // The mean is recomputed from the (hash-verified) responses, so a
        // disagreement here can only mean a hand-edited file.
        if file.response_mean.to_bits() != surrogate.response_mean().to_bits() {
            return Err(fail(format!(
                "stored response mean {} does not match the stack's {}",
                file.response_mean,
                surrogate.response_mean()
            )));
        }
        Ok(surrogate)
    }
}
