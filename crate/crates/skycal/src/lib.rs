//! Bayesian calibration of expensive sky-map simulators against Poisson
//! count data, built around a sparse (Vecchia) Gaussian-process surrogate.
//!
//! The pipeline: ingest a corpus of simulator runs ([`data`]), fit a GP
//! surrogate to the stacked (parameter x sky) design — exactly for small
//! problems ([`gp`]), sparsely for large ones ([`vecchia`]) — then invert
//! field observations for the simulator parameters by MCMC ([`inversion`]),
//! scoring the results with proper diagnostics ([`diagnostics`]). The
//! [`experiments`] module packages the validation studies: synthetic-truth
//! recovery, hold-one-out benchmarking, cross-validated score grids, and
//! timing sweeps.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod inversion;
pub mod kernel;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod vecchia;

pub use error::{Error, ErrorCategory, Result};
pub use gp::{ExactGP, FitReport, PredictiveSummary};
pub use inversion::{CalibrationProblem, LikelihoodMode, McmcConfig, PosteriorSamples};
pub use kernel::KernelSpec;
pub use vecchia::{fit_vecchia, FieldPredictor, VecchiaSurrogate, DEFAULT_M};
