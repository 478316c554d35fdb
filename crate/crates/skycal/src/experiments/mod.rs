//! Reproducible experiment runners: a toy problem, a synthetic sky-map
//! testbed, hold-one-out benchmarking, cross-validated CRPS grids, and
//! timing sweeps.
//!
//! Every runner is a pure function of its configuration and master seed at
//! a fixed worker count. Stochastic stages draw from named streams
//! ([`crate::rng::Stream`]), and independent cells (held-out runs, truths,
//! folds, replicates) each own a sub-stream indexed by cell, so cells can
//! run in parallel without perturbing one another.
//!
//! Runners optionally write a self-contained output directory: the echoed
//! configuration (`config_echo`), a `metrics.csv`, per-cell artifacts, and
//! a `MANIFEST` listing the SHA-256 of every file. Wall-clock measurements
//! are segregated into `timings.csv` and excluded from the manifest
//! hashes, so everything hashed is bit-reproducible from (config, seed).

mod cv;
mod holdout;
mod recovery;
mod synth;
mod timing;
mod toy;

pub use cv::{cv_crps_grid, CvConfig, CvFoldCell, CvReport};
pub use holdout::{holdout_benchmark, HoldoutCell, HoldoutConfig, HoldoutReport};
pub use recovery::{run_recovery_grid, RecoveryConfig, RecoveryReport, TruthCell};
pub use synth::{
    run_content_hash, synth_from_rates, synth_generate, synth_generate_stream, SyntheticField,
    SyntheticTestbed,
};
pub use timing::{log_log_slope, timing_sweep, SweepAxis, TimingCell, TimingConfig, TimingReport};
pub use toy::ToyProblem;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A per-location schedule of exposures or backgrounds: either one value
/// everywhere or a pattern repeated cyclically across the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant(f64),
    Cycle(Vec<f64>),
}

impl Schedule {
    /// Expands the schedule to one value per location.
    pub fn expand(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Schedule::Constant(v) => {
                if !v.is_finite() {
                    return Err(Error::validation(format!("schedule value {v} is not finite")));
                }
                Ok(vec![*v; n])
            }
            Schedule::Cycle(vs) => {
                if vs.is_empty() {
                    return Err(Error::validation("cyclic schedule needs at least one value"));
                }
                if let Some(v) = vs.iter().find(|v| !v.is_finite()) {
                    return Err(Error::validation(format!("schedule value {v} is not finite")));
                }
                Ok((0..n).map(|i| vs[i % vs.len()]).collect())
            }
        }
    }
}

/// SHA-256 of a byte string, as lowercase hex.
pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// `n` equally spaced values covering `[lo, hi]`, endpoints included.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "linspace needs at least two points");
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// An experiment output directory under construction. Files go through
/// this writer so the final `MANIFEST` can list their hashes; wall-clock
/// artifacts are recorded by name but left out of the hash list, keeping
/// the manifest itself reproducible.
pub struct OutputDir {
    root: PathBuf,
    hashed: Vec<(String, String)>,
    excluded: Vec<String>,
}

impl OutputDir {
    /// Creates the directory (and any missing parents).
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| Error::io(root.display().to_string(), e))?;
        Ok(OutputDir {
            root,
            hashed: Vec::new(),
            excluded: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn full_path(&self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        Ok(path)
    }

    /// Writes a reproducible text file and records its hash.
    pub fn write_text(&mut self, rel: &str, content: &str) -> Result<()> {
        let path = self.full_path(rel)?;
        fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.hashed.push((rel.to_string(), sha256_hex(content.as_bytes())));
        Ok(())
    }

    /// Writes a wall-clock artifact: present in the directory and named in
    /// the manifest, but not hashed (elapsed times differ run to run).
    pub fn write_wall_clock_text(&mut self, rel: &str, content: &str) -> Result<()> {
        let path = self.full_path(rel)?;
        fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.excluded.push(rel.to_string());
        Ok(())
    }

    /// Serializes the runner's configuration to `config_echo` (TOML).
    pub fn write_config_echo<C: Serialize>(&mut self, config: &C) -> Result<()> {
        let text = toml::to_string_pretty(config)
            .map_err(|e| Error::validation(format!("configuration is not serializable: {e}")))?;
        self.write_text("config_echo", &text)
    }

    /// Hashes a file some other writer produced inside the directory.
    pub fn record_file(&mut self, rel: &str) -> Result<()> {
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.hashed.push((rel.to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    /// Resolves a path for a writer that takes paths directly; pair with
    /// [`record_file`](Self::record_file) afterwards.
    pub fn path_for(&self, rel: &str) -> Result<PathBuf> {
        self.full_path(rel)
    }

    /// Writes the `MANIFEST` and returns the directory root. Hash lines
    /// are sorted by path; wall-clock artifacts are listed as comments.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.hashed.sort();
        self.excluded.sort();
        let mut text = String::from("# sha256  path\n");
        for (rel, hash) in &self.hashed {
            text.push_str(&format!("{hash}  {rel}\n"));
        }
        for rel in &self.excluded {
            text.push_str(&format!("# wall-clock artifact, not hashed: {rel}\n"));
        }
        let path = self.root.join("MANIFEST");
        fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(self.root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_expansion() {
        assert_eq!(Schedule::Constant(3.0).expand(4).unwrap(), vec![3.0; 4]);
        assert_eq!(
            Schedule::Cycle(vec![1.0, 2.0]).expand(5).unwrap(),
            vec![1.0, 2.0, 1.0, 2.0, 1.0]
        );
        assert!(Schedule::Cycle(vec![]).expand(3).is_err());
        assert!(Schedule::Constant(f64::NAN).expand(2).is_err());
    }

    #[test]
    fn sha256_matches_known_vector() {
        // FIPS 180-2 test vector for "abc".
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn linspace_covers_endpoints() {
        let v = linspace(-1.0, 2.0, 4);
        assert_eq!(v, vec![-1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn output_dir_manifest_lists_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("out");
        let mut out = OutputDir::create(&root).unwrap();
        out.write_text("metrics.csv", "a,b\n1,2\n").unwrap();
        out.write_text("cells/cell-000/notes.txt", "hello\n").unwrap();
        out.write_wall_clock_text("timings.csv", "elapsed\n0.123\n").unwrap();
        let returned = out.finish().unwrap();
        assert_eq!(returned, root);

        let manifest = fs::read_to_string(root.join("MANIFEST")).unwrap();
        let expected = sha256_hex(b"a,b\n1,2\n");
        assert!(manifest.contains(&format!("{expected}  metrics.csv")));
        assert!(manifest.contains("cells/cell-000/notes.txt"));
        assert!(manifest.contains("# wall-clock artifact, not hashed: timings.csv"));
        // The timing file exists but its hash does not appear.
        assert!(root.join("timings.csv").is_file());
        let timing_hash = sha256_hex(b"elapsed\n0.123\n");
        assert!(!manifest.contains(&timing_hash));
    }

    #[test]
    fn config_echo_is_parseable_toml() {
        #[derive(Serialize)]
        struct Demo {
            seed: u64,
            m: usize,
        }
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path().join("out")).unwrap();
        out.write_config_echo(&Demo { seed: 7, m: 25 }).unwrap();
        let root = out.finish().unwrap();
        let text = fs::read_to_string(root.join("config_echo")).unwrap();
        let parsed: toml::Value = text.parse().unwrap();
        assert_eq!(parsed["seed"].as_integer(), Some(7));
        assert_eq!(parsed["m"].as_integer(), Some(25));
    }
}
