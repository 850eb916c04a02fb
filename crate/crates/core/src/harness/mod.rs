//! Pool-based active metric learning experiments.
//!
//! Per repeat the data is split into test rows and 1NN training rows; a
//! class-balanced pool of training examples provides the candidate pairs.
//! Every strategy starts from the same random initial pairs, then alternates
//! refitting its learner from scratch, scoring 1NN accuracy, and querying the
//! oracle for another batch of pairs.

mod pool;
mod report;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pool::{build_pool, build_pool_from, oracle_label, split_test};
pub use report::{
    format_table, summarize, write_outputs, write_results_csv, write_summary_csv, SummaryRow,
};
pub use synth::{synth_data, SynthSpec};

use crate::active::{select, PairPool, Scorer};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricModel};
use crate::mle::{mle_fit_features, MleConfig, MleSolution};
use crate::spectral::{eigen_basis, BasisOptions, DataMatrix, EigenBasis, KPolicy};
use crate::vb::{fit_features, FitOptions, PriorConfig, VariationalPosterior};

/// A learner paired with its pair-selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LearnerStrategy {
    /// MLE metric, pairs drawn at random.
    RandomMle,
    /// MLE metric, plug-in entropy selection.
    MleAct,
    /// Bayesian metric, plug-in entropy at the posterior mean.
    BayesAct,
    /// Bayesian metric, Laplacian-approximation entropy.
    BayesVar,
    /// Fixed Euclidean metric.
    Euclid,
}

impl LearnerStrategy {
    pub const ALL: [LearnerStrategy; 5] = [
        LearnerStrategy::RandomMle,
        LearnerStrategy::MleAct,
        LearnerStrategy::BayesAct,
        LearnerStrategy::BayesVar,
        LearnerStrategy::Euclid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LearnerStrategy::RandomMle => "RANDOM_MLE",
            LearnerStrategy::MleAct => "MLE_ACT",
            LearnerStrategy::BayesAct => "BAYES_ACT",
            LearnerStrategy::BayesVar => "BAYES_VAR",
            LearnerStrategy::Euclid => "EUCLID",
        }
    }

    fn code(self) -> u64 {
        match self {
            LearnerStrategy::RandomMle => 1,
            LearnerStrategy::MleAct => 2,
            LearnerStrategy::BayesAct => 3,
            LearnerStrategy::BayesVar => 4,
            LearnerStrategy::Euclid => 5,
        }
    }
}

impl fmt::Display for LearnerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LearnerStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase().replace(['+', '-'], "_");
        match upper.as_str() {
            "RANDOM_MLE" | "MLE_RAND" => Ok(LearnerStrategy::RandomMle),
            "MLE_ACT" => Ok(LearnerStrategy::MleAct),
            "BAYES_ACT" => Ok(LearnerStrategy::BayesAct),
            "BAYES_VAR" => Ok(LearnerStrategy::BayesVar),
            "EUCLID" => Ok(LearnerStrategy::Euclid),
            _ => Err(Error::InvalidConfig(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Csv(PathBuf),
    Synth(SynthSpec),
}

impl DataSource {
    /// Synthetic data is generated from `seed`; CSV data ignores it.
    pub fn load(&self, seed: u64) -> Result<DataMatrix> {
        match self {
            DataSource::Csv(path) => DataMatrix::read_csv(path)
                .map_err(|e| e.context(format!("reading {}", path.display()))),
            DataSource::Synth(spec) => synth_data(spec, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Examples whose pairs form the candidate pool.
    pub pool_size: usize,
    pub n_test: usize,
    pub initial_pairs: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub strategies: Vec<LearnerStrategy>,
    pub prior: PriorConfig,
    pub k_policy: KPolicy,
    pub basis: BasisOptions,
    pub vb: FitOptions,
    pub mle: MleConfig,
    pub repeats: usize,
    pub seed: u64,
    /// Write measured wall-clock times; off keeps the results byte-stable.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthSpec::default()),
            pool_size: 50,
            n_test: 100,
            initial_pairs: 10,
            batch_size: 20,
            iterations: 5,
            strategies: LearnerStrategy::ALL.to_vec(),
            prior: PriorConfig::default(),
            k_policy: KPolicy::default(),
            basis: BasisOptions::default(),
            vb: FitOptions::default(),
            mle: MleConfig::default(),
            repeats: 10,
            seed: 0,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.strategies.is_empty() {
            return fail("no strategies selected".into());
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1".into());
        }
        if self.pool_size < 2 || self.n_test == 0 {
            return fail("pool size must be >= 2 and test size >= 1".into());
        }
        if self.pool_size + self.n_test > n {
            return fail(format!(
                "pool size {} + test size {} exceeds {n} examples",
                self.pool_size, self.n_test
            ));
        }
        if self.iterations > 0 && self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        let pairs = self.pool_size * (self.pool_size - 1) / 2;
        let needed = self.batch_size * self.iterations + self.initial_pairs;
        if needed > pairs {
            return fail(format!(
                "{needed} labeled pairs requested but the pool only has {pairs}"
            ));
        }
        self.prior.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub strategy: LearnerStrategy,
    pub repeat: usize,
    pub iteration: usize,
    pub n_pairs: usize,
    pub accuracy: f64,
    pub runtime_ms: f64,
    pub seed: u64,
}

/// Order-sensitive 64-bit seed mixing (SplitMix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        state = state.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// Seed shared by all strategies of one repeat (split, pool, initial pairs).
pub fn repeat_seed(base: u64, repeat: usize) -> u64 {
    mix_seed(&[base, repeat as u64])
}

/// Seed owned by one strategy within one repeat (random selection).
pub fn strategy_seed(base: u64, strategy: LearnerStrategy, repeat: usize) -> u64 {
    mix_seed(&[base, strategy.code(), repeat as u64])
}

/// A fitted learner of either kind.
#[derive(Debug, Clone)]
pub enum FittedLearner {
    Bayes(VariationalPosterior),
    Mle(MleSolution),
}

impl FittedLearner {
    pub fn metric(&self, basis: &EigenBasis) -> Result<MetricModel> {
        match self {
            FittedLearner::Bayes(p) => MetricModel::from_posterior(p, basis.clone()),
            FittedLearner::Mle(s) => MetricModel::from_mle(s, basis.clone()),
        }
    }
}

/// Everything one repeat shares across strategies.
struct RepeatSetup {
    train: DataMatrix,
    test: DataMatrix,
    basis: EigenBasis,
    projected: DMatrix<f64>,
    pool: PairPool,
}

fn setup_repeat(data: &DataMatrix, config: &ExperimentConfig, repeat: usize) -> Result<RepeatSetup> {
    let mut rng = ChaCha8Rng::seed_from_u64(repeat_seed(config.seed, repeat));
    let (test_rows, train_rows) = split_test(data.nrows(), config.n_test, &mut rng)?;
    let (_, mut pool) = build_pool_from(data, &train_rows, config.pool_size, &mut rng)?;
    let candidates = pool.candidates().to_vec();
    let initial = rand::seq::index::sample(&mut rng, candidates.len(), config.initial_pairs);
    for idx in initial {
        let (i, j) = candidates[idx];
        pool.add_label((i, j), oracle_label(data, i, j)?)?;
    }
    let train = data.select_rows(&train_rows)?;
    let test = data.select_rows(&test_rows)?;
    // basis over every non-test example, labeled or not
    let basis = eigen_basis(&train, config.k_policy, &config.basis)?;
    let projected = basis.project(data)?;
    Ok(RepeatSetup {
        train,
        test,
        basis,
        projected,
        pool,
    })
}

fn fit_learner(
    strategy: LearnerStrategy,
    pool: &PairPool,
    projected: &DMatrix<f64>,
    config: &ExperimentConfig,
) -> Result<FittedLearner> {
    let features = crate::spectral::ConstraintFeatures::new(
        projected.ncols() + 1,
        pool.labeled()
            .iter()
            .map(|&((i, j), _)| crate::spectral::PairFeature::from_projected(projected, i, j))
            .collect(),
        pool.labeled().iter().map(|&(_, label)| label).collect(),
    )?;
    match strategy {
        LearnerStrategy::BayesAct | LearnerStrategy::BayesVar => {
            fit_features(&features, &config.prior, &config.vb).map(FittedLearner::Bayes)
        }
        LearnerStrategy::RandomMle | LearnerStrategy::MleAct => {
            mle_fit_features(&features, &config.mle).map(FittedLearner::Mle)
        }
        LearnerStrategy::Euclid => unreachable!("euclidean baseline has no learner"),
    }
}

fn scorer_for(strategy: LearnerStrategy, learner: &FittedLearner) -> Scorer {
    match (strategy, learner) {
        (LearnerStrategy::RandomMle, FittedLearner::Mle(s)) => Scorer::random(s.gamma_vector()),
        (LearnerStrategy::MleAct, FittedLearner::Mle(s)) => Scorer::mle_act(s),
        (LearnerStrategy::BayesAct, FittedLearner::Bayes(p)) => Scorer::bayes_act(p),
        (LearnerStrategy::BayesVar, FittedLearner::Bayes(p)) => Scorer::bayes_var(p),
        _ => unreachable!("strategy and learner kinds are paired in fit_learner"),
    }
}

fn elapsed_ms(start: Instant, enabled: bool) -> f64 {
    if enabled {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

fn run_strategy(
    data: &DataMatrix,
    setup: &RepeatSetup,
    strategy: LearnerStrategy,
    repeat: usize,
    config: &ExperimentConfig,
) -> Result<Vec<ResultRecord>> {
    let seed = strategy_seed(config.seed, strategy, repeat);
    let mut records = Vec::with_capacity(config.iterations + 1);
    let record = |iteration: usize, accuracy: f64, runtime_ms: f64| ResultRecord {
        strategy,
        repeat,
        iteration,
        n_pairs: config.initial_pairs + iteration * config.batch_size,
        accuracy,
        runtime_ms,
        seed,
    };

    if strategy == LearnerStrategy::Euclid {
        let start = Instant::now();
        let accuracy = evaluate(&MetricModel::euclidean(data.ncols())?, &setup.train, &setup.test)?;
        let runtime = elapsed_ms(start, config.record_timing);
        for iteration in 0..=config.iterations {
            records.push(record(iteration, accuracy, runtime));
        }
        return Ok(records);
    }

    let mut pool = setup.pool.clone();
    for iteration in 0..=config.iterations {
        let ctx = || format!("strategy {strategy}, repeat {repeat}, iteration {iteration}");
        let start = Instant::now();
        let learner = fit_learner(strategy, &pool, &setup.projected, config).map_err(|e| e.context(ctx()))?;
        let model = learner.metric(&setup.basis).map_err(|e| e.context(ctx()))?;
        let accuracy = evaluate(&model, &setup.train, &setup.test).map_err(|e| e.context(ctx()))?;
        records.push(record(iteration, accuracy, elapsed_ms(start, config.record_timing)));
        if iteration == config.iterations {
            break;
        }
        let scorer = scorer_for(strategy, &learner);
        let batch = select(
            &pool,
            &scorer,
            &setup.projected,
            config.batch_size,
            mix_seed(&[seed, iteration as u64]),
        )
        .map_err(|e| e.context(ctx()))?;
        for (i, j) in batch {
            pool.add_label((i, j), oracle_label(data, i, j)?)?;
        }
    }
    Ok(records)
}

/// Load the configured data and run every strategy for every repeat.
pub fn run_active_loop(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let data = config.data.load(config.seed)?;
    run_on_data(&data, config)
}

/// Records come back ordered by strategy (in config order), repeat and
/// iteration, independent of scheduling.
pub fn run_on_data(data: &DataMatrix, config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    data.require_labels()?;
    config.validate(data.nrows())?;
    let per_repeat: Vec<Vec<ResultRecord>> = (0..config.repeats)
        .into_par_iter()
        .map(|repeat| {
            let setup = setup_repeat(data, config, repeat)
                .map_err(|e| e.context(format!("repeat {repeat} setup")))?;
            let mut out = Vec::new();
            for &strategy in &config.strategies {
                out.extend(run_strategy(data, &setup, strategy, repeat, config)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let order = |s: LearnerStrategy| config.strategies.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    let mut records: Vec<ResultRecord> = per_repeat.into_iter().flatten().collect();
    records.sort_by_key(|r| (order(r.strategy), r.repeat, r.iteration));
    Ok(records)
}
