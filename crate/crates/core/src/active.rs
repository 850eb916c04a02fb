//! Uncertainty-driven selection of unlabeled pairs.
//!
//! A pair is scored by the binary entropy of its predicted similarity
//! `Pr(+|xᵢ, xⱼ)`. The probability comes either from a point estimate of `γ`
//! (plug-in) or from a Laplacian approximation that integrates over the
//! Gaussian posterior of `γ` and so accounts for its covariance.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::MleSolution;
use crate::numeric::{log_sigmoid, sigmoid, softplus};
use crate::spectral::{pair_key, Constraint, ConstraintSet, PairFeature, PairLabel};
use crate::vb::VariationalPosterior;

/// Binary entropy in nats, with `0 log 0 = 0`.
pub fn entropy(p_plus: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    (term(p_plus) + term(1.0 - p_plus)).clamp(0.0, std::f64::consts::LN_2)
}

/// Entropy of `σ(t)`, accurate even when `σ(t)` rounds to 0 or 1.
pub fn entropy_from_logit(t: f64) -> f64 {
    let value = sigmoid(t) * softplus(-t) + sigmoid(-t) * softplus(t);
    value.clamp(0.0, std::f64::consts::LN_2)
}

/// `Pr(+) = 1 / (1 + exp(γᵀω))`.
pub fn plugin_posterior(gamma: &DVector<f64>, omega: &PairFeature) -> f64 {
    sigmoid(-omega.dot(gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `p^± = exp(±μᵀω) / (1 + exp(±μᵀω))`.
pub fn expansion_weight(mean: &DVector<f64>, omega: &PairFeature, sign: Sign) -> f64 {
    sigmoid(sign.value() * omega.dot(mean))
}

/// Curvature `q = p(1 - p)` of the logistic term at the mean. The Laplacian
/// approximation drops `qωωᵀ` against the posterior precision, so this only
/// serves diagnostics.
pub fn curvature_weight(mean: &DVector<f64>, omega: &PairFeature) -> f64 {
    let p = expansion_weight(mean, omega, Sign::Plus);
    p * (1.0 - p)
}

/// Approximate mode `γ^± = max(μ ∓ p^± Σω, 0)`, elementwise.
pub fn laplace_gamma(
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    omega: &PairFeature,
    sign: Sign,
) -> DVector<f64> {
    let p = expansion_weight(mean, omega, sign);
    let shift = covariance * omega.omega();
    (mean - shift * (sign.value() * p)).map(|v| v.max(0.0))
}

/// Log-odds `log Pr(+) - log Pr(-)` under the Laplacian approximation,
/// with unnormalized masses `σ(∓ωᵀγ^±) exp(-[p^±]² ωᵀΣω / 2)`.
pub fn laplace_log_odds(mean: &DVector<f64>, covariance: &DMatrix<f64>, omega: &PairFeature) -> Result<f64> {
    let spread = omega.omega().dot(&(covariance * omega.omega()));
    let log_mass = |sign: Sign| {
        let mode = laplace_gamma(mean, covariance, omega, sign);
        let p = expansion_weight(mean, omega, sign);
        log_sigmoid(-sign.value() * omega.dot(&mode)) - 0.5 * p * p * spread
    };
    let plus = log_mass(Sign::Plus);
    let minus = log_mass(Sign::Minus);
    if !plus.is_finite() && !minus.is_finite() {
        return Err(Error::PosteriorUnderflow { spread });
    }
    let odds = plus - minus;
    if odds.is_nan() {
        return Err(Error::PosteriorUnderflow { spread });
    }
    Ok(odds)
}

/// Normalized `Pr(+)` under the Laplacian approximation.
pub fn laplace_posterior(mean: &DVector<f64>, covariance: &DMatrix<f64>, omega: &PairFeature) -> Result<f64> {
    laplace_log_odds(mean, covariance, omega).map(sigmoid)
}

/// Selection strategy tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Random,
    MleAct,
    BayesAct,
    BayesVar,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "RANDOM",
            Strategy::MleAct => "MLE_ACT",
            Strategy::BayesAct => "BAYES_ACT",
            Strategy::BayesVar => "BAYES_VAR",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RANDOM" => Ok(Strategy::Random),
            "MLE_ACT" => Ok(Strategy::MleAct),
            "BAYES_ACT" => Ok(Strategy::BayesAct),
            "BAYES_VAR" => Ok(Strategy::BayesVar),
            other => Err(Error::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ScoreModel {
    PlugIn(DVector<f64>),
    Laplace {
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    },
}

/// A fitted model paired with the strategy that uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    strategy: Strategy,
    model: ScoreModel,
}

impl Scorer {
    /// Random selection; scores are still reported with the plug-in model.
    pub fn random(gamma: DVector<f64>) -> Self {
        Self {
            strategy: Strategy::Random,
            model: ScoreModel::PlugIn(gamma),
        }
    }

    pub fn mle_act(solution: &MleSolution) -> Self {
        Self {
            strategy: Strategy::MleAct,
            model: ScoreModel::PlugIn(solution.gamma_vector()),
        }
    }

    /// Plug-in entropy at the (clamped) posterior mean.
    pub fn bayes_act(posterior: &VariationalPosterior) -> Self {
        Self {
            strategy: Strategy::BayesAct,
            model: ScoreModel::PlugIn(posterior.mean.clone()),
        }
    }

    /// Laplacian-approximation entropy using mean and covariance.
    pub fn bayes_var(posterior: &VariationalPosterior) -> Self {
        Self {
            strategy: Strategy::BayesVar,
            model: ScoreModel::Laplace {
                mean: posterior.mean.clone(),
                covariance: posterior.covariance.clone(),
            },
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            ScoreModel::PlugIn(g) => g.len(),
            ScoreModel::Laplace { mean, .. } => mean.len(),
        }
    }

    fn log_odds(&self, omega: &PairFeature) -> Result<f64> {
        match &self.model {
            ScoreModel::PlugIn(gamma) => Ok(-omega.dot(gamma)),
            ScoreModel::Laplace { mean, covariance } => laplace_log_odds(mean, covariance, omega),
        }
    }

    pub fn score(&self, pair: (usize, usize), omega: &PairFeature) -> Result<PairScore> {
        if omega.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: omega.len(),
            });
        }
        let t = self.log_odds(omega)?;
        Ok(PairScore {
            pair: pair_key(pair.0, pair.1),
            p_plus: sigmoid(t),
            entropy: entropy_from_logit(t),
            strategy: self.strategy,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair: (usize, usize),
    pub p_plus: f64,
    pub entropy: f64,
    pub strategy: Strategy,
}

impl PairScore {
    pub fn p_minus(&self) -> f64 {
        1.0 - self.p_plus
    }
}

/// Candidate pairs split into labeled and unlabeled parts. Pairs are stored
/// as `(min, max)` row indices and kept in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPool {
    candidates: Vec<(usize, usize)>,
    labeled: Vec<((usize, usize), PairLabel)>,
    labeled_keys: HashSet<(usize, usize)>,
}

impl PairPool {
    pub fn new(candidates: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut keys: Vec<(usize, usize)> = Vec::new();
        for (i, j) in candidates {
            if i == j {
                return Err(Error::SelfPair(i));
            }
            keys.push(pair_key(i, j));
        }
        keys.sort_unstable();
        let before = keys.len();
        keys.dedup();
        if keys.len() != before {
            return Err(Error::InvalidConstraints("duplicate candidate pairs".into()));
        }
        Ok(Self {
            candidates: keys,
            labeled: Vec::new(),
            labeled_keys: HashSet::new(),
        })
    }

    /// Every unordered pair of the given rows.
    pub fn all_pairs(rows: &[usize]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
        for (a, &i) in rows.iter().enumerate() {
            for &j in &rows[a + 1..] {
                pairs.push((i, j));
            }
        }
        Self::new(pairs)
    }

    pub fn candidates(&self) -> &[(usize, usize)] {
        &self.candidates
    }

    /// Labeled pairs in the order they were labeled.
    pub fn labeled(&self) -> &[((usize, usize), PairLabel)] {
        &self.labeled
    }

    pub fn is_labeled(&self, i: usize, j: usize) -> bool {
        self.labeled_keys.contains(&pair_key(i, j))
    }

    /// Unlabeled pairs in lexicographic order.
    pub fn unlabeled(&self) -> Vec<(usize, usize)> {
        self.candidates
            .iter()
            .copied()
            .filter(|p| !self.labeled_keys.contains(p))
            .collect()
    }

    pub fn unlabeled_len(&self) -> usize {
        self.candidates.len() - self.labeled.len()
    }

    pub fn add_label(&mut self, pair: (usize, usize), label: PairLabel) -> Result<()> {
        let key = pair_key(pair.0, pair.1);
        if self.candidates.binary_search(&key).is_err() {
            return Err(Error::InvalidConstraints(format!(
                "pair {key:?} is not a pool candidate"
            )));
        }
        if !self.labeled_keys.insert(key) {
            return Err(Error::InvalidConstraints(format!("pair {key:?} already labeled")));
        }
        self.labeled.push((key, label));
        Ok(())
    }

    pub fn constraint_set(&self, rows: usize) -> Result<ConstraintSet> {
        ConstraintSet::from_items(
            rows,
            self.labeled
                .iter()
                .map(|&((i, j), label)| Constraint { i, j, label }),
        )
    }
}

/// Score every given pair; `projected` holds basis coordinates of the rows
/// (see [`crate::EigenBasis::project`]).
pub fn score_pairs(
    pairs: &[(usize, usize)],
    scorer: &Scorer,
    projected: &DMatrix<f64>,
) -> Result<Vec<PairScore>> {
    let n = projected.nrows();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::IndexOutOfBounds {
            index: i.max(j),
            rows: n,
        });
    }
    pairs
        .par_iter()
        .map(|&(i, j)| scorer.score((i, j), &PairFeature::from_projected(projected, i, j)))
        .collect()
}

/// Pick `batch` unlabeled pairs. Entropy strategies take the highest-entropy
/// pairs, breaking ties by lexicographic pair order; `RANDOM` draws a uniform
/// sample without replacement from the unlabeled pairs in canonical order.
pub fn select(
    pool: &PairPool,
    scorer: &Scorer,
    projected: &DMatrix<f64>,
    batch: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let unlabeled = pool.unlabeled();
    if unlabeled.is_empty() {
        return Err(Error::EmptyPool);
    }
    if batch == 0 || batch > unlabeled.len() {
        return Err(Error::InvalidConfig(format!(
            "batch of {batch} from {} unlabeled pairs",
            unlabeled.len()
        )));
    }
    if scorer.strategy() == Strategy::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<(usize, usize)> = rand::seq::index::sample(&mut rng, unlabeled.len(), batch)
            .into_iter()
            .map(|idx| unlabeled[idx])
            .collect();
        picked.sort_unstable();
        return Ok(picked);
    }
    let mut scores = score_pairs(&unlabeled, scorer, projected)?;
    scores.sort_by(|a, b| b.entropy.total_cmp(&a.entropy).then(a.pair.cmp(&b.pair)));
    Ok(scores.into_iter().take(batch).map(|s| s.pair).collect())
}
