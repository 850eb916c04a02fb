use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bdml_core::active::{score_pairs, Scorer};
use bdml_core::eval::evaluate;
use bdml_core::harness::{
    build_pool, format_table, oracle_label, run_active_loop, write_outputs, DataSource, FittedLearner,
};
use bdml_core::mle::mle_fit;
use bdml_core::spectral::{eigen_basis, Constraint};
use bdml_core::vb::fit;
use bdml_core::{
    BasisOptions, ConstraintSet, DataMatrix, ExperimentConfig, KPolicy, LearnerStrategy, MetricModel, MleConfig,
    PairLabel, PriorConfig, Strategy, SynthSpec,
};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "bdml", version, about = "Learn a distance metric from pairwise constraints and pick pairs to label")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pool-based active learning experiment.
    Run(RunArgs),
    /// Fit one model and dump the score of every unlabeled candidate pair.
    ScorePairs(ScoreArgs),
    /// 1NN accuracy of a saved model.
    Eval(EvalArgs),
}

#[derive(Args)]
struct BasisArgs {
    /// Number of eigenvectors (overrides --energy).
    #[arg(long)]
    k: Option<usize>,
    /// Spectral energy fraction used to pick K.
    #[arg(long, default_value_t = 0.95)]
    energy: f64,
    /// Upper bound on K under the energy policy.
    #[arg(long, default_value_t = 50)]
    k_cap: usize,
    /// Use the raw scatter without mean-centering.
    #[arg(long)]
    no_center: bool,
    /// Skip per-column z-scoring.
    #[arg(long)]
    no_standardize: bool,
}

impl BasisArgs {
    fn policy(&self) -> KPolicy {
        match self.k {
            Some(k) => KPolicy::Explicit(k),
            None => KPolicy::Energy {
                fraction: self.energy,
                cap: self.k_cap,
            },
        }
    }

    fn options(&self) -> BasisOptions {
        BasisOptions {
            center: !self.no_center,
            standardize: !self.no_standardize,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Prior mean of every augmented weight.
    #[arg(long, default_value_t = 1.0)]
    gamma0: f64,
    /// Prior precision of every augmented weight.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// L2 regularization of the MLE baseline.
    #[arg(long, default_value_t = 1e-6)]
    reg: f64,
}

impl ModelArgs {
    fn prior(&self) -> Result<PriorConfig> {
        Ok(PriorConfig::new(self.gamma0, self.delta)?)
    }

    fn mle(&self) -> MleConfig {
        MleConfig {
            reg: self.reg,
            ..MleConfig::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Labeled CSV dataset (columns f0.., label).
    #[arg(long, conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Synthetic dataset, e.g. `classes=3,per_class=60,dim=10,spread=1,separation=3`.
    #[arg(long)]
    synth: Option<String>,
    /// Comma-separated subset of RANDOM_MLE, MLE_ACT, BAYES_ACT, BAYES_VAR, EUCLID.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long, default_value_t = 50)]
    pool_size: usize,
    #[arg(long, default_value_t = 100)]
    test_size: usize,
    #[arg(long, default_value_t = 10)]
    initial_pairs: usize,
    #[arg(long, default_value_t = 20)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    basis: BasisArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Record wall-clock time per fit (results are then not byte-stable).
    #[arg(long)]
    timing: bool,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Labeled CSV dataset.
    #[arg(long)]
    data: PathBuf,
    /// MLE_ACT, BAYES_ACT, BAYES_VAR or RANDOM.
    #[arg(long, default_value = "BAYES_VAR")]
    strategy: String,
    /// Labeled pairs as CSV with header `i,j,y` (y = 1 or -1).
    #[arg(long, conflicts_with = "pairs")]
    constraints: Option<PathBuf>,
    /// Number of random candidate pairs to label with the ground-truth oracle.
    #[arg(long, default_value_t = 10)]
    pairs: usize,
    /// Examples forming the candidate pool (default: every row).
    #[arg(long)]
    pool_size: Option<usize>,
    /// Seed for the pool and the random initial pairs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    basis: BasisArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Score CSV destination.
    #[arg(long, default_value = "scores.csv")]
    out: PathBuf,
    /// Where to save the fitted metric as JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Where to save the variational posterior (Bayesian strategies only).
    #[arg(long)]
    posterior_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Metric JSON written by `score-pairs --model-out`.
    #[arg(long, required_unless_present = "euclid")]
    model: Option<PathBuf>,
    /// Evaluate the plain Euclidean metric instead of a saved model.
    #[arg(long)]
    euclid: bool,
    /// Labeled 1NN reference rows.
    #[arg(long)]
    train: PathBuf,
    /// Labeled rows to classify.
    #[arg(long)]
    test: PathBuf,
}

fn parse_synth(spec: &str) -> Result<SynthSpec> {
    let mut out = SynthSpec::default();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .with_context(|| format!("synthetic spec entry `{part}` is not key=value"))?;
        let bad = || format!("invalid value `{value}` for `{key}`");
        match key.trim() {
            "classes" | "c" => out.classes = value.parse().with_context(bad)?,
            "per_class" | "n" => out.per_class = value.parse().with_context(bad)?,
            "dim" | "d" => out.dim = value.parse().with_context(bad)?,
            "spread" => out.spread = value.parse().with_context(bad)?,
            "separation" => out.separation = value.parse().with_context(bad)?,
            other => bail!("unknown synthetic spec key `{other}`"),
        }
    }
    out.validate()?;
    Ok(out)
}

fn run(args: RunArgs) -> Result<()> {
    let data = match (&args.data, &args.synth) {
        (Some(path), None) => DataSource::Csv(path.clone()),
        (None, Some(spec)) => DataSource::Synth(parse_synth(spec)?),
        (None, None) => DataSource::Synth(SynthSpec::default()),
        (Some(_), Some(_)) => unreachable!("clap rejects --data with --synth"),
    };
    let strategies = match &args.strategies {
        Some(list) => list
            .iter()
            .map(|s| s.parse::<LearnerStrategy>())
            .collect::<Result<Vec<_>, _>>()?,
        None => LearnerStrategy::ALL.to_vec(),
    };
    let config = ExperimentConfig {
        data,
        pool_size: args.pool_size,
        n_test: args.test_size,
        initial_pairs: args.initial_pairs,
        batch_size: args.batch,
        iterations: args.iterations,
        strategies,
        prior: args.model.prior()?,
        k_policy: args.basis.policy(),
        basis: args.basis.options(),
        mle: args.model.mle(),
        repeats: args.repeats,
        seed: args.seed,
        record_timing: args.timing,
        ..ExperimentConfig::default()
    };
    let records = run_active_loop(&config)?;
    let summary = write_outputs(&args.out, &config, &records)
        .with_context(|| format!("writing results to {}", args.out.display()))?;
    print!("{}", format_table(&summary));
    println!("results written to {}", args.out.display());
    Ok(())
}

fn read_constraints(path: &Path, rows: usize) -> Result<ConstraintSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    #[derive(serde::Deserialize)]
    struct Row {
        i: usize,
        j: usize,
        y: i32,
    }
    let mut set = ConstraintSet::new(rows);
    for (idx, row) in rdr.deserialize::<Row>().enumerate() {
        let line = idx + 2;
        let row = row.with_context(|| format!("{} row {line}", path.display()))?;
        let label = PairLabel::from_sign(row.y).with_context(|| format!("{} row {line}", path.display()))?;
        set.push(Constraint { i: row.i, j: row.j, label })
            .with_context(|| format!("{} row {line}", path.display()))?;
    }
    Ok(set)
}

fn score(args: ScoreArgs) -> Result<()> {
    let data = DataMatrix::read_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let strategy: Strategy = args.strategy.parse()?;
    let pool_size = args.pool_size.unwrap_or(data.nrows());
    let (_, mut pool) = if data.labels().is_some() {
        build_pool(&data, pool_size, args.seed)?
    } else {
        let rows: Vec<usize> = (0..pool_size.min(data.nrows())).collect();
        (rows.clone(), bdml_core::PairPool::all_pairs(&rows)?)
    };

    let constraints = match &args.constraints {
        Some(path) => {
            let set = read_constraints(path, data.nrows())?;
            for c in set.items() {
                if pool.add_label((c.i, c.j), c.label).is_err() {
                    // pairs outside the pool still train the model
                    continue;
                }
            }
            set
        }
        None => {
            let candidates = pool.candidates().to_vec();
            if args.pairs > candidates.len() {
                bail!("{} pairs requested from {} candidates", args.pairs, candidates.len());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            for idx in rand::seq::index::sample(&mut rng, candidates.len(), args.pairs) {
                let (i, j) = candidates[idx];
                pool.add_label((i, j), oracle_label(&data, i, j)?)?;
            }
            pool.constraint_set(data.nrows())?
        }
    };

    let basis = eigen_basis(&data, args.basis.policy(), &args.basis.options())?;
    let (learner, scorer) = match strategy {
        Strategy::BayesAct | Strategy::BayesVar => {
            let post = fit(&constraints, &data, &basis, &args.model.prior()?, &Default::default())?;
            let scorer = if strategy == Strategy::BayesAct {
                Scorer::bayes_act(&post)
            } else {
                Scorer::bayes_var(&post)
            };
            (FittedLearner::Bayes(post), scorer)
        }
        Strategy::MleAct | Strategy::Random => {
            let sol = mle_fit(&constraints, &data, &basis, &args.model.mle())?;
            let scorer = if strategy == Strategy::MleAct {
                Scorer::mle_act(&sol)
            } else {
                Scorer::random(sol.gamma_vector())
            };
            (FittedLearner::Mle(sol), scorer)
        }
    };

    let projected = basis.project(&data)?;
    let scores = score_pairs(&pool.unlabeled(), &scorer, &projected)?;
    let mut wtr = csv::Writer::from_path(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    wtr.write_record(["i", "j", "p_plus", "entropy", "strategy"])?;
    for s in &scores {
        wtr.write_record([
            s.pair.0.to_string(),
            s.pair.1.to_string(),
            s.p_plus.to_string(),
            s.entropy.to_string(),
            s.strategy.to_string(),
        ])?;
    }
    wtr.flush()?;

    if let Some(path) = &args.model_out {
        let model = learner.metric(&basis)?;
        std::fs::write(path, serde_json::to_string_pretty(&model)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.posterior_out {
        match &learner {
            FittedLearner::Bayes(post) => std::fs::write(path, post.to_json()?)
                .with_context(|| format!("writing {}", path.display()))?,
            FittedLearner::Mle(_) => bail!("--posterior-out needs a Bayesian strategy"),
        }
    }
    println!(
        "scored {} pairs from {} constraints into {}",
        scores.len(),
        constraints.len(),
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let train = DataMatrix::read_csv(&args.train).with_context(|| format!("reading {}", args.train.display()))?;
    let test = DataMatrix::read_csv(&args.test).with_context(|| format!("reading {}", args.test.display()))?;
    let model = match &args.model {
        Some(path) if !args.euclid => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<MetricModel>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        _ => MetricModel::euclidean(train.ncols())?,
    };
    let acc = evaluate(&model, &train, &test)?;
    println!("accuracy {acc:.6}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::ScorePairs(args) => score(args),
        Command::Eval(args) => eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
