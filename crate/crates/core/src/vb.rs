//! Variational Bayesian posterior over the augmented metric weights.
//!
//! The prior is `N(γ; γ₀1, δ⁻¹I)` and each constraint contributes
//! `σ(-y γᵀω)`. The logistic terms are bounded below with the Jaakkola-Jordan
//! quadratic bound, which keeps the variational posterior Gaussian. Fitting
//! alternates a closed-form Gaussian update (E-step) with the optimal
//! per-constraint variational parameters `ξ` (M-step); each half step is a
//! coordinate ascent move on the same evidence lower bound.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sigmoid, sigmoid};
use crate::spectral::{ConstraintFeatures, ConstraintSet, DataMatrix, EigenBasis};

/// Below this magnitude `λ(ξ)` is evaluated from its Taylor series.
const LAMBDA_SERIES_CUTOFF: f64 = 1e-4;

/// Gaussian prior `N(γ; γ₀1, δ⁻¹I)` on the augmented weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub gamma0: f64,
    pub delta: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            gamma0: 1.0,
            delta: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn new(gamma0: f64, delta: f64) -> Result<Self> {
        let prior = Self { gamma0, delta };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "prior precision delta must be positive, got {}",
                self.delta
            )));
        }
        if !(self.gamma0 >= 0.0 && self.gamma0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "prior mean gamma0 must be nonnegative, got {}",
                self.gamma0
            )));
        }
        Ok(())
    }
}

/// `λ(ξ) = tanh(ξ/2) / (4ξ)`, even in `ξ`, with `λ(0) = 1/8`.
pub fn lambda_xi(xi: f64) -> f64 {
    if xi.abs() < LAMBDA_SERIES_CUTOFF {
        0.125 - xi * xi / 96.0
    } else {
        (xi / 2.0).tanh() / (4.0 * xi)
    }
}

/// Right-hand side of the Jaakkola-Jordan inequality
/// `σ(z) ≥ σ(ξ) exp((z - ξ)/2 - λ(ξ)(z² - ξ²))`.
pub fn jj_bound(z: f64, xi: f64) -> f64 {
    (log_sigmoid(xi) + (z - xi) / 2.0 - lambda_xi(xi) * (z * z - xi * xi)).exp()
}

/// Where the mean is projected onto the nonnegative orthant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClampMode {
    /// EM runs on the unconstrained Gaussian; only the reported mean is
    /// clamped. The bound trajectory is then monotone.
    Output,
    /// The clamped mean also feeds each M-step.
    EveryIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative change of the bound that counts as converged.
    pub tol: f64,
    pub max_iters: usize,
    pub clamp: ClampMode,
    pub xi_init: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 200,
            clamp: ClampMode::Output,
            xi_init: 1.0,
        }
    }
}

/// Result of one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianUpdate {
    /// Solution of the linear system before clamping.
    pub raw_mean: DVector<f64>,
    /// `raw_mean` clamped elementwise to `≥ 0`.
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Gaussian update for fixed `ξ`:
/// `Σ = (δI + 2Σ_S + 2Σ_D)⁻¹`, `μ = Σ(δγ₀1 - Σ_S ω/2 + Σ_D ω/2)`.
pub fn e_step(features: &ConstraintFeatures, xi: &[f64], prior: &PriorConfig) -> Result<GaussianUpdate> {
    prior.validate()?;
    if xi.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: xi.len(),
        });
    }
    let dim = features.dim();
    let mut precision = DMatrix::identity(dim, dim) * prior.delta;
    let mut rhs = DVector::from_element(dim, prior.delta * prior.gamma0);
    for ((f, label), &x) in features.iter().zip(xi) {
        let w = f.omega();
        precision.syger(2.0 * lambda_xi(x), w, w, 1.0);
        rhs.axpy(-label.sign() / 2.0, w, 1.0);
    }
    let chol = factor_spd(&precision)?;
    let mut covariance = chol.inverse();
    symmetrize(&mut covariance);
    let raw_mean = chol.solve(&rhs);
    let mean = raw_mean.map(|v| v.max(0.0));
    Ok(GaussianUpdate {
        raw_mean,
        mean,
        covariance,
    })
}

/// Cholesky factor of a symmetric positive-definite matrix, adding
/// escalating diagonal jitter if the plain factorization fails.
pub(crate) fn factor_spd(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol);
    }
    let n = m.nrows();
    let base = 1e-10 * m.trace().abs() / n as f64;
    let mut jitter = base;
    for _ in 0..4 {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(chol);
        }
        jitter *= 10.0;
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    Err(Error::Singular {
        condition: if min > 0.0 { max / min } else { f64::INFINITY },
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Optimal variational parameters `ξ = sqrt((μᵀω)² + ωᵀΣω)`.
pub fn m_step(features: &ConstraintFeatures, mean: &DVector<f64>, covariance: &DMatrix<f64>) -> Vec<f64> {
    features
        .features()
        .iter()
        .map(|f| {
            let w = f.omega();
            let m = mean.dot(w);
            (m * m + quad_form(covariance, w)).sqrt()
        })
        .collect()
}

fn quad_form(m: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(m * w))
}

/// Evidence lower bound at the Gaussian `N(mean, covariance)` and the given
/// variational parameters.
pub fn elbo(
    features: &ConstraintFeatures,
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    xi: &[f64],
    prior: &PriorConfig,
) -> Result<f64> {
    let dim = features.dim();
    if mean.len() != dim || covariance.nrows() != dim || covariance.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: mean.len(),
        });
    }
    if xi.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: xi.len(),
        });
    }
    let chol = Cholesky::new(covariance.clone()).ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let k1 = dim as f64;

    let offset = mean.map(|m| m - prior.gamma0);
    let expected_log_prior = -0.5 * k1 * (2.0 * PI / prior.delta).ln()
        - 0.5 * prior.delta * (offset.norm_squared() + covariance.trace());
    let entropy = 0.5 * k1 * (2.0 * PI * std::f64::consts::E).ln() + 0.5 * log_det;

    let mut likelihood = 0.0;
    for ((f, label), &x) in features.iter().zip(xi) {
        let w = f.omega();
        let m = mean.dot(w);
        let second_moment = m * m + quad_form(covariance, w);
        likelihood += log_sigmoid(x) + (-label.sign() * m - x) / 2.0
            - lambda_xi(x) * (second_moment - x * x);
    }
    Ok(expected_log_prior + entropy + likelihood)
}

/// Gaussian posterior over `γ = (μ, γ₁, …, γ_K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    /// Mean clamped to the nonnegative orthant; what downstream consumers use.
    pub mean: DVector<f64>,
    /// Mean as produced by the last E-step.
    pub raw_mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub xi: Vec<f64>,
    /// Final value of the evidence lower bound.
    pub bound: f64,
    /// Bound at the initial state followed by the value after every iteration.
    pub bound_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub prior: PriorConfig,
    pub options: FitOptions,
}

impl VariationalPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PosteriorDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PosteriorDocument = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// On-disk form: `sigma` is row-major.
#[derive(Debug, Serialize, Deserialize)]
struct PosteriorDocument {
    mu: Vec<f64>,
    mu_unclamped: Vec<f64>,
    sigma: Vec<f64>,
    dim: usize,
    xi: Vec<f64>,
    bound: f64,
    bound_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    config: PosteriorConfigEcho,
}

#[derive(Debug, Serialize, Deserialize)]
struct PosteriorConfigEcho {
    prior: PriorConfig,
    options: FitOptions,
}

impl From<&VariationalPosterior> for PosteriorDocument {
    fn from(p: &VariationalPosterior) -> Self {
        Self {
            mu: p.mean.as_slice().to_vec(),
            mu_unclamped: p.raw_mean.as_slice().to_vec(),
            sigma: p.covariance.transpose().as_slice().to_vec(),
            dim: p.dim(),
            xi: p.xi.clone(),
            bound: p.bound,
            bound_trace: p.bound_trace.clone(),
            iterations: p.iterations,
            converged: p.converged,
            config: PosteriorConfigEcho {
                prior: p.prior,
                options: p.options,
            },
        }
    }
}

impl TryFrom<PosteriorDocument> for VariationalPosterior {
    type Error = Error;

    fn try_from(doc: PosteriorDocument) -> Result<Self> {
        let dim = doc.dim;
        if doc.mu.len() != dim || doc.mu_unclamped.len() != dim || doc.sigma.len() != dim * dim {
            return Err(Error::InvalidData("posterior document has inconsistent sizes".into()));
        }
        Ok(Self {
            mean: DVector::from_vec(doc.mu),
            raw_mean: DVector::from_vec(doc.mu_unclamped),
            covariance: DMatrix::from_row_slice(dim, dim, &doc.sigma),
            xi: doc.xi,
            bound: doc.bound,
            bound_trace: doc.bound_trace,
            iterations: doc.iterations,
            converged: doc.converged,
            prior: doc.config.prior,
            options: doc.config.options,
        })
    }
}

/// Fit the variational posterior for the constraints over `data`.
pub fn fit(
    constraints: &ConstraintSet,
    data: &DataMatrix,
    basis: &EigenBasis,
    prior: &PriorConfig,
    options: &FitOptions,
) -> Result<VariationalPosterior> {
    let features = constraints.features(data, basis)?;
    fit_features(&features, prior, options)
}

/// Alternate E- and M-steps until the relative change of the bound drops
/// below `options.tol` or `options.max_iters` is reached.
pub fn fit_features(
    features: &ConstraintFeatures,
    prior: &PriorConfig,
    options: &FitOptions,
) -> Result<VariationalPosterior> {
    prior.validate()?;
    if options.xi_init.is_nan() || options.xi_init <= 0.0 || options.max_iters == 0 {
        return Err(Error::InvalidConfig(
            "xi_init must be positive and max_iters at least 1".into(),
        ));
    }
    let dim = features.dim();
    let mut xi = vec![options.xi_init; features.len()];
    let prior_cov = DMatrix::identity(dim, dim) / prior.delta;
    let prior_mean = DVector::from_element(dim, prior.gamma0);
    let mut bound = elbo(features, &prior_mean, &prior_cov, &xi, prior)?;
    let mut trace = vec![bound];

    let mut iterations = 0;
    let mut converged = false;
    let mut update = None;
    while iterations < options.max_iters {
        iterations += 1;
        let step = e_step(features, &xi, prior)?;
        let em_mean = match options.clamp {
            ClampMode::Output => &step.raw_mean,
            ClampMode::EveryIteration => &step.mean,
        };
        xi = m_step(features, em_mean, &step.covariance);
        let next = elbo(features, em_mean, &step.covariance, &xi, prior)?;
        trace.push(next);
        let change = (next - bound).abs();
        bound = next;
        update = Some(step);
        if change < options.tol * trace[trace.len() - 2].abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let step = update.expect("at least one iteration runs");
    Ok(VariationalPosterior {
        mean: step.mean,
        raw_mean: step.raw_mean,
        covariance: step.covariance,
        xi,
        bound,
        bound_trace: trace,
        iterations,
        converged,
        prior: *prior,
        options: *options,
    })
}

/// Plug-in similarity probability `Pr(+) = σ(-γᵀω)` at the posterior mean.
pub fn mean_similarity(post: &VariationalPosterior, omega: &DVector<f64>) -> f64 {
    sigmoid(-post.mean.dot(omega))
}
