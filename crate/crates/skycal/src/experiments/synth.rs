//! Synthetic field data: Poisson count draws whose means come from a
//! held-out simulator run (or a supplied rate vector), plus the testbed
//! wrapper that enforces the held-out-truth discipline.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use sha2::{Digest, Sha256};

use crate::data::{FieldDataset, SimulatorCorpus, SpatialLocation};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

use super::Schedule;

/// A generated field dataset together with the provenance a replicate
/// study needs: the truth parameters, the seed, and (when the rates came
/// from a corpus) the generating run.
#[derive(Debug, Clone)]
pub struct SyntheticField {
    pub data: FieldDataset,
    pub u_star: Vec<f64>,
    pub seed: u64,
    /// Corpus run whose rates generated the draws; `None` when a truth
    /// function supplied the rates directly.
    pub truth_run: Option<usize>,
}

/// Draws `Y_i ~ Poisson((λ*_i + λ_b,i)·e_i)` at each location. The caller
/// owns the RNG so replicate studies can hand each cell its own stream.
pub(crate) fn draw_field(
    locations: Vec<SpatialLocation>,
    rates: &[f64],
    exposures: Vec<f64>,
    backgrounds: Vec<f64>,
    rng: &mut impl Rng,
    label: impl Into<String>,
) -> Result<FieldDataset> {
    let n = locations.len();
    if rates.len() != n || exposures.len() != n || backgrounds.len() != n {
        return Err(Error::validation(format!(
            "synthetic draw shapes disagree: {n} locations, {} rates, {} exposures, {} backgrounds",
            rates.len(),
            exposures.len(),
            backgrounds.len()
        )));
    }
    let mut counts = Vec::with_capacity(n);
    for i in 0..n {
        let mean = (rates[i] + backgrounds[i]) * exposures[i];
        if !mean.is_finite() || mean < 0.0 {
            return Err(Error::validation(format!(
                "Poisson mean at location {i} is {mean}; expected a finite nonnegative mean"
            )));
        }
        if mean == 0.0 {
            counts.push(0.0);
        } else {
            let dist = Poisson::new(mean)
                .map_err(|e| Error::numerical(format!("Poisson mean {mean} rejected: {e}")))?;
            counts.push(dist.sample(rng));
        }
    }
    FieldDataset::new(locations, counts, exposures, backgrounds, label)
}

/// Content hash of one simulator run: SHA-256 over its design row and rate
/// map (exact float bits). Two runs collide only if they are the same run
/// in all but name, which is exactly what the held-out-truth assertion
/// needs to detect.
pub fn run_content_hash(corpus: &SimulatorCorpus, run: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update((corpus.domain().dim() as u64).to_le_bytes());
    hasher.update((corpus.n_grid() as u64).to_le_bytes());
    for v in corpus.design(run) {
        hasher.update(v.to_bits().to_le_bytes());
    }
    for v in corpus.rates(run) {
        hasher.update(v.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Drops the truth run and asserts, by content hash, that nothing with
/// the same design and rates survives in the training corpus.
pub(crate) fn excluded_training(
    corpus: &SimulatorCorpus,
    truth_run: usize,
) -> Result<SimulatorCorpus> {
    let truth_hash = run_content_hash(corpus, truth_run);
    let training = corpus.without_run(truth_run)?;
    for r in 0..training.n_runs() {
        if run_content_hash(&training, r) == truth_hash {
            return Err(Error::validation(format!(
                "training corpus still contains the held-out truth: run '{}' duplicates run '{}'",
                training.run_ids()[r],
                corpus.run_ids()[truth_run]
            )));
        }
    }
    Ok(training)
}

fn find_truth_run(corpus: &SimulatorCorpus, u_star: &[f64]) -> Result<usize> {
    if u_star.len() != corpus.domain().dim() {
        return Err(Error::validation(format!(
            "truth has {} parameters but the domain has {}",
            u_star.len(),
            corpus.domain().dim()
        )));
    }
    (0..corpus.n_runs())
        .find(|&r| corpus.design(r) == u_star)
        .ok_or_else(|| {
            Error::validation(format!(
                "truth {u_star:?} matches no design row; hold out an existing run or supply the truth rates directly"
            ))
        })
}

/// Synthetic field counts drawn from the corpus run at `u_star`, using the
/// generation stream of `seed`. The run's rate map plays the true mean;
/// the run itself should then be excluded from surrogate training.
pub fn synth_generate(
    corpus: &SimulatorCorpus,
    u_star: &[f64],
    exposures: &Schedule,
    backgrounds: &Schedule,
    seed: u64,
) -> Result<SyntheticField> {
    synth_generate_stream(corpus, u_star, exposures, backgrounds, seed, Stream::Synth)
}

/// Synthetic counts from an explicit truth rate map — the path for truths
/// that are evaluable functions rather than corpus rows (and for studies
/// that perturb a run's rates before generating).
pub fn synth_from_rates(
    locations: &[SpatialLocation],
    rates: &[f64],
    u_star: &[f64],
    exposures: &Schedule,
    backgrounds: &Schedule,
    seed: u64,
    stream: Stream,
) -> Result<SyntheticField> {
    let n = locations.len();
    let ex = exposures.expand(n)?;
    let bg = backgrounds.expand(n)?;
    let mut rng = stream_rng(seed, stream);
    let data = draw_field(
        locations.to_vec(),
        rates,
        ex,
        bg,
        &mut rng,
        format!("synth u*={u_star:?} seed={seed}"),
    )?;
    Ok(SyntheticField {
        data,
        u_star: u_star.to_vec(),
        seed,
        truth_run: None,
    })
}

/// As [`synth_generate`], drawing from an explicit stream — replicate
/// studies pass `Stream::Cell(i)` so parallel cells stay disjoint.
pub fn synth_generate_stream(
    corpus: &SimulatorCorpus,
    u_star: &[f64],
    exposures: &Schedule,
    backgrounds: &Schedule,
    seed: u64,
    stream: Stream,
) -> Result<SyntheticField> {
    let truth_run = find_truth_run(corpus, u_star)?;
    let n = corpus.n_grid();
    let ex = exposures.expand(n)?;
    let bg = backgrounds.expand(n)?;
    let mut rng = stream_rng(seed, stream);
    let data = draw_field(
        corpus.grid().to_vec(),
        corpus.rates(truth_run),
        ex,
        bg,
        &mut rng,
        format!("synth {} seed={seed}", corpus.run_ids()[truth_run]),
    )?;
    Ok(SyntheticField {
        data,
        u_star: u_star.to_vec(),
        seed,
        truth_run: Some(truth_run),
    })
}

/// A corpus with one run promoted to "truth": its design must sit strictly
/// inside the parameter domain (edge truths are not tested), and training
/// data always comes from [`training_corpus`](Self::training_corpus),
/// which drops the truth run and asserts its content is gone.
#[derive(Debug, Clone)]
pub struct SyntheticTestbed {
    corpus: SimulatorCorpus,
    u_star: Vec<f64>,
    truth_run: usize,
    exposures: Schedule,
    backgrounds: Schedule,
    seed: u64,
}

impl SyntheticTestbed {
    pub fn new(
        corpus: SimulatorCorpus,
        u_star: Vec<f64>,
        exposures: Schedule,
        backgrounds: Schedule,
        seed: u64,
    ) -> Result<Self> {
        let truth_run = find_truth_run(&corpus, &u_star)?;
        let domain = corpus.domain();
        for (k, &v) in u_star.iter().enumerate() {
            if v <= domain.lower()[k] || v >= domain.upper()[k] {
                return Err(Error::validation(format!(
                    "truth parameter '{}' = {v} lies on the domain edge; only interior truths are tested",
                    domain.names()[k]
                )));
            }
        }
        Ok(SyntheticTestbed {
            corpus,
            u_star,
            truth_run,
            exposures,
            backgrounds,
            seed,
        })
    }

    pub fn corpus(&self) -> &SimulatorCorpus {
        &self.corpus
    }

    pub fn u_star(&self) -> &[f64] {
        &self.u_star
    }

    pub fn truth_run(&self) -> usize {
        self.truth_run
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The corpus with the truth run removed, content-hash checked.
    pub fn training_corpus(&self) -> Result<SimulatorCorpus> {
        excluded_training(&self.corpus, self.truth_run)
    }

    /// One field realization from the generation stream.
    pub fn generate(&self) -> Result<SyntheticField> {
        synth_generate(&self.corpus, &self.u_star, &self.exposures, &self.backgrounds, self.seed)
    }

    /// One field realization on a replicate cell's own stream.
    pub fn generate_cell(&self, cell: u64) -> Result<SyntheticField> {
        synth_generate_stream(
            &self.corpus,
            &self.u_star,
            &self.exposures,
            &self.backgrounds,
            self.seed,
            Stream::Cell(cell),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ParameterDomain;
    use crate::experiments::ToyProblem;
    use crate::linalg::RowMatrix;

    fn flat_corpus(rate: f64) -> SimulatorCorpus {
        let domain =
            ParameterDomain::new(vec!["a".to_string()], vec![0.0], vec![1.0]).unwrap();
        let designs = RowMatrix::new(3, 1, vec![0.25, 0.5, 0.75]);
        let grid = ToyProblem::circle_grid(4).unwrap();
        let rates = RowMatrix::new(3, 4, vec![rate; 12]);
        SimulatorCorpus::new(
            domain,
            vec!["r0".into(), "r1".into(), "r2".into()],
            designs,
            grid,
            rates,
        )
        .unwrap()
    }

    #[test]
    fn zero_rates_give_zero_counts() {
        let corpus = flat_corpus(0.0);
        let field = synth_generate(
            &corpus,
            &[0.5],
            &Schedule::Constant(10.0),
            &Schedule::Constant(0.0),
            1,
        )
        .unwrap();
        assert_eq!(field.data.counts(), &[0.0; 4]);
        assert_eq!(field.truth_run, Some(1));
        assert_eq!(field.u_star, vec![0.5]);
        assert_eq!(field.seed, 1);
    }

    #[test]
    fn sample_mean_matches_the_poisson_mean() {
        // 10⁴ i.i.d. draws at mean (3 + 0.5)·2 = 7; the law of large
        // numbers bounds the sample mean within 3·√(mean/n).
        let n = 10_000;
        let loc = SpatialLocation::from_latlon(0.0, 45.0).unwrap();
        let mut rng = stream_rng(5, Stream::Cell(0));
        let data = draw_field(
            vec![loc; n],
            &vec![3.0; n],
            vec![2.0; n],
            vec![0.5; n],
            &mut rng,
            "lln",
        )
        .unwrap();
        let mean = data.counts().iter().sum::<f64>() / n as f64;
        let tol = 3.0 * (7.0f64 / n as f64).sqrt();
        assert!((mean - 7.0).abs() < tol, "sample mean {mean} off 7 by more than {tol}");
    }

    #[test]
    fn doubling_exposure_doubles_the_mean_count() {
        let n = 10_000;
        let loc = SpatialLocation::from_latlon(10.0, 200.0).unwrap();
        let mut rng1 = stream_rng(9, Stream::Cell(1));
        let single = draw_field(
            vec![loc; n],
            &vec![3.0; n],
            vec![1.0; n],
            vec![0.5; n],
            &mut rng1,
            "e1",
        )
        .unwrap();
        let mut rng2 = stream_rng(9, Stream::Cell(2));
        let double = draw_field(
            vec![loc; n],
            &vec![3.0; n],
            vec![2.0; n],
            vec![0.5; n],
            &mut rng2,
            "e2",
        )
        .unwrap();
        let m1 = single.counts().iter().sum::<f64>() / n as f64;
        let m2 = double.counts().iter().sum::<f64>() / n as f64;
        assert!((m2 / m1 - 2.0).abs() < 0.1, "ratio {} far from 2", m2 / m1);
    }

    #[test]
    fn unknown_truth_is_rejected() {
        let corpus = flat_corpus(1.0);
        let err = synth_generate(
            &corpus,
            &[0.3],
            &Schedule::Constant(1.0),
            &Schedule::Constant(0.0),
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("matches no design row"));
        // Wrong dimension is caught before the row scan.
        assert!(synth_generate(
            &corpus,
            &[0.5, 0.5],
            &Schedule::Constant(1.0),
            &Schedule::Constant(0.0),
            0,
        )
        .is_err());
    }

    #[test]
    fn draws_are_reproducible_per_stream() {
        let corpus = flat_corpus(4.0);
        let ex = Schedule::Constant(3.0);
        let bg = Schedule::Constant(0.0);
        let a = synth_generate(&corpus, &[0.25], &ex, &bg, 7).unwrap();
        let b = synth_generate(&corpus, &[0.25], &ex, &bg, 7).unwrap();
        assert_eq!(a.data.counts(), b.data.counts());
        let c = synth_generate_stream(&corpus, &[0.25], &ex, &bg, 7, Stream::Cell(3)).unwrap();
        assert_ne!(a.data.counts(), c.data.counts());
        let d = synth_generate(&corpus, &[0.25], &ex, &bg, 8).unwrap();
        assert_ne!(a.data.counts(), d.data.counts());
    }

    #[test]
    fn run_hashes_separate_distinct_runs() {
        let corpus = ToyProblem::grid_corpus(3, 6).unwrap();
        let hashes: Vec<String> =
            (0..corpus.n_runs()).map(|r| run_content_hash(&corpus, r)).collect();
        for h in &hashes {
            assert_eq!(h.len(), 64);
        }
        for i in 0..hashes.len() {
            for j in i + 1..hashes.len() {
                assert_ne!(hashes[i], hashes[j]);
            }
        }
        assert_eq!(run_content_hash(&corpus, 2), hashes[2]);
    }

    #[test]
    fn training_exclusion_catches_duplicate_content() {
        let corpus = flat_corpus(1.0);
        let training = excluded_training(&corpus, 1).unwrap();
        assert_eq!(training.n_runs(), 2);

        // Two runs with identical design and rates: holding out one leaves
        // its content in the training set, which must be refused.
        let domain =
            ParameterDomain::new(vec!["a".to_string()], vec![0.0], vec![1.0]).unwrap();
        let designs = RowMatrix::new(2, 1, vec![0.5, 0.5]);
        let grid = ToyProblem::circle_grid(3).unwrap();
        let rates = RowMatrix::new(2, 3, vec![2.0; 6]);
        let dup = SimulatorCorpus::new(
            domain,
            vec!["a0".into(), "a1".into()],
            designs,
            grid,
            rates,
        )
        .unwrap();
        let err = excluded_training(&dup, 0).unwrap_err();
        assert!(err.to_string().contains("duplicates"));
    }

    #[test]
    fn testbed_rejects_edge_truths() {
        let corpus = ToyProblem::grid_corpus(3, 6).unwrap();
        let ex = Schedule::Constant(1.0);
        let bg = Schedule::Constant(0.0);
        // (0.5, 0.5) is the center row of the 3x3 design grid.
        let bed = SyntheticTestbed::new(corpus.clone(), vec![0.5, 0.5], ex.clone(), bg.clone(), 2)
            .unwrap();
        assert_eq!(bed.truth_run(), 4);
        let training = bed.training_corpus().unwrap();
        assert_eq!(training.n_runs(), 8);
        assert!(!training.run_ids().contains(&"run-004".to_string()));

        let err =
            SyntheticTestbed::new(corpus, vec![0.0, 0.5], ex, bg, 2).unwrap_err();
        assert!(err.to_string().contains("edge"));
    }

    #[test]
    fn testbed_cells_draw_disjoint_streams() {
        let corpus = ToyProblem::grid_corpus(3, 10).unwrap();
        let bed = SyntheticTestbed::new(
            corpus,
            vec![0.5, 0.5],
            Schedule::Constant(50.0),
            Schedule::Constant(0.1),
            6,
        )
        .unwrap();
        let a = bed.generate_cell(0).unwrap();
        let b = bed.generate_cell(1).unwrap();
        assert_ne!(a.data.counts(), b.data.counts());
        let a2 = bed.generate_cell(0).unwrap();
        assert_eq!(a.data.counts(), a2.data.counts());
    }
}
