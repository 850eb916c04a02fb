//! Bayesian distance metric learning from pairwise constraints.
//!
//! A Mahalanobis metric is parametrized as a nonnegative combination of the
//! top eigenvectors of the data scatter, `A = Σ γ_l v_l v_lᵀ`, together with a
//! similarity threshold `μ`. The crate provides:
//!
//! * [`spectral`]: data ingestion, eigen basis, PCA and pair features;
//! * [`vb`]: variational Bayesian posterior over the augmented weights;
//! * [`mle`]: the maximum-likelihood point-estimate baseline;
//! * [`active`]: entropy-based scoring and selection of unlabeled pairs;
//! * [`eval`]: metric assembly, distances and 1NN classification;
//! * [`harness`]: the pool-based active learning experiment driver.

pub mod active;
pub mod error;
pub mod eval;
pub mod harness;
pub mod mle;
pub mod numeric;
pub mod spectral;
pub mod vb;

pub use active::{PairPool, PairScore, Scorer, Strategy};
pub use error::{Error, Result};
pub use eval::MetricModel;
pub use harness::{ExperimentConfig, LearnerStrategy, ResultRecord, SynthSpec};
pub use mle::{MleConfig, MleSolution};
pub use spectral::{
    BasisOptions, ConstraintFeatures, ConstraintSet, DataMatrix, EigenBasis, KPolicy, PairFeature,
    PairLabel,
};
pub use vb::{ClampMode, FitOptions, PriorConfig, VariationalPosterior};
