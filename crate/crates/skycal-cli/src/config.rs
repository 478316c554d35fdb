//! Run configuration: a TOML file with sections mirroring the pipeline
//! stages, plus the global command-line overrides. Precedence is built-in
//! defaults < config file < command-line flags, and every run echoes the
//! fully resolved configuration next to its outputs, so a directory always
//! records what produced it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use skycal::experiments::{CvConfig, HoldoutConfig, Schedule, TimingConfig, ToyProblem};
use skycal::gp::DENSE_SIZE_CAP;
use skycal::{Error, McmcConfig, Result, DEFAULT_M};

/// The complete run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    /// Worker-pool size; absent means one worker per available core.
    pub threads: Option<usize>,
    pub paths: Paths,
    pub surrogate: SurrogateBlock,
    pub mcmc: McmcConfig,
    pub experiment: ExperimentBlock,
}

/// Input and output locations. Each command validates the subset it
/// actually reads, so a config can stay partial.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Field observations CSV (counts, exposures, backgrounds).
    pub field: Option<PathBuf>,
    /// Simulator corpus CSV (designs and sky-map responses).
    pub simulator: Option<PathBuf>,
    /// Parameter-domain file (names and bounds).
    pub domain: Option<PathBuf>,
    /// Fitted-surrogate file, written by `fit` and read by `predict` and
    /// `calibrate`.
    pub surrogate: Option<PathBuf>,
    /// Output directory; defaults to `out` in the working directory.
    pub out_dir: Option<PathBuf>,
}

/// Surrogate-fitting knobs shared by every command that fits one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateBlock {
    /// Conditioning-set size (clamped to the stacked size).
    pub m: usize,
    /// Stacked-size limit for dense-GP comparisons.
    pub dense_cap: usize,
    /// Objective-evaluation budget per fitting stage.
    pub fit_budget: usize,
}

impl Default for SurrogateBlock {
    fn default() -> Self {
        SurrogateBlock {
            m: DEFAULT_M,
            dense_cap: DENSE_SIZE_CAP,
            fit_budget: 500,
        }
    }
}

/// Mode-specific settings, one sub-table per experiment command. Only the
/// table for the command being run is read.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentBlock {
    pub predict: PredictBlock,
    pub synth: SynthBlock,
    pub holdout: HoldoutConfig,
    pub cv: CvConfig,
    pub bench: TimingConfig,
    pub toy: ToyBlock,
}

/// Settings for `predict`: where in parameter space to krige the sky map.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictBlock {
    /// Parameter setting, in physical units. Required.
    pub u: Vec<f64>,
}

/// Settings for `synth`: the synthetic truth and observing schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthBlock {
    /// True parameter setting, in physical units. Required.
    pub u_star: Vec<f64>,
    /// Per-location exposure schedule.
    pub exposures: Schedule,
    /// Per-location additive background-rate schedule.
    pub backgrounds: Schedule,
}

impl Default for SynthBlock {
    fn default() -> Self {
        SynthBlock {
            u_star: Vec::new(),
            exposures: Schedule::Constant(1.0),
            backgrounds: Schedule::Constant(0.0),
        }
    }
}

/// Settings for `toy`: the self-contained demonstration problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBlock {
    /// True parameter setting on the unit square. The corpus is laid out
    /// around it, so `u_star[0]` must leave room for the design span
    /// (see `toy_axes`).
    pub u_star: Vec<f64>,
    /// Sky-map locations per run.
    pub n_grid: usize,
    /// Constant exposure for the synthetic field.
    pub exposure: f64,
}

impl Default for ToyBlock {
    fn default() -> Self {
        ToyBlock {
            u_star: vec![0.5, 0.5],
            n_grid: 36,
            exposure: 10.0,
        }
    }
}

impl ToyBlock {
    /// Corpus axes for the demo: thirteen u₁ values spaced 0.02 around
    /// `u_star[0]`, and the coarse u₂ ladder {0, ¼, ½, ¾, 1} with
    /// `u_star[1]` spliced in. The u₁ axis spans less than half the toy
    /// mean's period — beyond that the surface repeats and the truth stops
    /// being identifiable — and its spacing is fine enough that the fitted
    /// u₁ lengthscale supports interpolation between design values.
    pub fn toy_axes(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.u_star.len() != 2 {
            return Err(Error::validation(format!(
                "the toy problem has two parameters; got u_star of length {}",
                self.u_star.len()
            )));
        }
        let (c1, c2) = (self.u_star[0], self.u_star[1]);
        if !(0.12..=0.88).contains(&c1) || !(0.0..=1.0).contains(&c2) {
            return Err(Error::validation(format!(
                "toy u_star must lie in [0.12, 0.88] x [0, 1] so the design \
                 fits around it; got [{c1}, {c2}]"
            )));
        }
        let u1 = (0..13).map(|i| c1 + 0.02 * (i as f64 - 6.0)).collect();
        let mut u2: Vec<f64> = vec![0.0, 0.25, 0.5, 0.75, 1.0, c2];
        u2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        u2.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        Ok((u1, u2))
    }
}

impl RunConfig {
    /// Parses a config file. Unknown keys are errors: a typo in a config
    /// should fail loudly, not silently fall back to a default.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: format!("invalid config: {e}"),
        })
    }

    /// Applies the global command-line overrides.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        threads: Option<usize>,
        out_dir: Option<PathBuf>,
    ) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(t) = threads {
            self.threads = Some(t);
        }
        if let Some(dir) = out_dir {
            self.paths.out_dir = Some(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(Error::validation("threads must be at least 1"));
        }
        self.mcmc.validate()
    }

    /// The resolved output directory.
    pub fn out_dir(&self) -> PathBuf {
        self.paths
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// A path field that the current command requires, checked to exist.
    pub fn required_path<'a>(&'a self, which: &str) -> Result<&'a Path> {
        let field = match which {
            "field" => &self.paths.field,
            "simulator" => &self.paths.simulator,
            "domain" => &self.paths.domain,
            "surrogate" => &self.paths.surrogate,
            other => panic!("unknown path field {other}"),
        };
        let path = field.as_deref().ok_or_else(|| {
            Error::validation(format!("this command needs paths.{which} in the config"))
        })?;
        if !path.exists() {
            return Err(Error::validation(format!(
                "paths.{which} = {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    /// The demo's toy-problem view (exposure schedule; one replicate).
    pub fn toy_problem(&self) -> ToyProblem {
        ToyProblem {
            exposures: Schedule::Constant(self.experiment.toy.exposure),
            replicates: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_library() {
        let config = RunConfig::default();
        assert_eq!(config.surrogate.m, 25);
        assert_eq!(config.mcmc.iterations, 10_000);
        assert_eq!(config.mcmc.burn_in, 1_000);
        assert_eq!(config.mcmc.thinning, 10);
        assert_eq!(config.experiment.cv.folds, 10);
        assert!(config.paths.field.is_none());
        assert_eq!(config.out_dir(), PathBuf::from("out"));
    }

    #[test]
    fn file_round_trip_and_unknown_key_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "seed = 9\n[paths]\nfield = \"f.csv\"\n[mcmc]\niterations = 500\n",
        )
        .unwrap();
        let config = RunConfig::from_file(&path).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.paths.field, Some(PathBuf::from("f.csv")));
        assert_eq!(config.mcmc.iterations, 500);
        // Untouched sections keep their defaults.
        assert_eq!(config.surrogate.fit_budget, 500);

        fs::write(&path, "sede = 9\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
        fs::write(&path, "[paths]\nfeild = \"f.csv\"\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn overrides_beat_the_file() {
        let mut config = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        config.apply_overrides(Some(7), Some(2), Some(PathBuf::from("elsewhere")));
        assert_eq!(config.seed, 7);
        assert_eq!(config.threads, Some(2));
        assert_eq!(config.out_dir(), PathBuf::from("elsewhere"));
        config.apply_overrides(None, None, None);
        assert_eq!(config.seed, 7);
    }

    #[test]
    fn required_path_errors_name_the_field() {
        let config = RunConfig::default();
        let err = config.required_path("field").unwrap_err().to_string();
        assert!(err.contains("paths.field"), "{err}");

        let mut config = RunConfig::default();
        config.paths.simulator = Some(PathBuf::from("/no/such/file.csv"));
        let err = config.required_path("simulator").unwrap_err().to_string();
        assert!(err.contains("does not exist"), "{err}");
    }

    #[test]
    fn toy_axes_center_on_the_truth() {
        let block = ToyBlock::default();
        let (u1, u2) = block.toy_axes().unwrap();
        assert_eq!(u1.len(), 13);
        assert!((u1[6] - 0.5).abs() < 1e-15);
        assert!((u1[12] - u1[0] - 0.24).abs() < 1e-12);
        // 0.5 is already on the coarse ladder, so no splice.
        assert_eq!(u2, vec![0.0, 0.25, 0.5, 0.75, 1.0]);

        let block = ToyBlock {
            u_star: vec![0.4, 0.6],
            ..ToyBlock::default()
        };
        let (u1, u2) = block.toy_axes().unwrap();
        assert!((u1[6] - 0.4).abs() < 1e-15);
        assert_eq!(u2, vec![0.0, 0.25, 0.5, 0.6, 0.75, 1.0]);

        let block = ToyBlock {
            u_star: vec![0.05, 0.5],
            ..ToyBlock::default()
        };
        assert!(block.toy_axes().is_err());
    }
}
