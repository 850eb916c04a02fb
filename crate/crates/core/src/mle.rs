//! Maximum-likelihood point estimate of the augmented weights.
//!
//! Maximizes `L(γ) = -Σ log(1 + exp(y γᵀω)) - reg ‖γ‖² / 2` over `γ ≥ 0` by
//! projected gradient ascent with Armijo backtracking.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softplus};
use crate::spectral::{ConstraintFeatures, ConstraintSet, DataMatrix, EigenBasis};

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub reg: f64,
    /// Stop once the projected gradient norm falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            reg: 1e-6,
            tol: 1e-6,
            max_iters: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleSolution {
    pub gamma: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl MleSolution {
    pub fn gamma_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.gamma)
    }
}

pub fn mle_objective(gamma: &DVector<f64>, features: &ConstraintFeatures, reg: f64) -> f64 {
    let nll: f64 = features
        .iter()
        .map(|(f, label)| softplus(label.sign() * f.dot(gamma)))
        .sum();
    -nll - 0.5 * reg * gamma.norm_squared()
}

/// `∂L/∂γ = -Σ y σ(y γᵀω) ω - reg γ`.
pub fn mle_gradient(gamma: &DVector<f64>, features: &ConstraintFeatures, reg: f64) -> DVector<f64> {
    let mut grad = gamma * -reg;
    for (f, label) in features.iter() {
        let y = label.sign();
        grad.axpy(-y * sigmoid(y * f.dot(gamma)), f.omega(), 1.0);
    }
    grad
}

fn project(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

/// Norm of `P(γ + g) - γ`; zero exactly at stationary points of the
/// constrained problem.
fn projected_gradient_norm(gamma: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    (project(&(gamma + grad)) - gamma).norm()
}

/// All-ones vector scaled so that the median `|γᵀω|` over the constraints is
/// one; zero when there are no constraints.
fn start_point(features: &ConstraintFeatures) -> DVector<f64> {
    let dim = features.dim();
    let ones = DVector::from_element(dim, 1.0);
    let mut magnitudes: Vec<f64> = features.features().iter().map(|f| f.dot(&ones).abs()).collect();
    if magnitudes.is_empty() {
        return DVector::zeros(dim);
    }
    magnitudes.sort_by(f64::total_cmp);
    let mid = magnitudes.len() / 2;
    let median = if magnitudes.len().is_multiple_of(2) {
        0.5 * (magnitudes[mid - 1] + magnitudes[mid])
    } else {
        magnitudes[mid]
    };
    if median > 0.0 && median.is_finite() {
        ones / median
    } else {
        ones
    }
}

pub fn mle_fit(
    constraints: &ConstraintSet,
    data: &DataMatrix,
    basis: &EigenBasis,
    config: &MleConfig,
) -> Result<MleSolution> {
    let features = constraints.features(data, basis)?;
    mle_fit_features(&features, config)
}

pub fn mle_fit_features(features: &ConstraintFeatures, config: &MleConfig) -> Result<MleSolution> {
    if !(config.reg >= 0.0 && config.reg.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "reg must be nonnegative, got {}",
            config.reg
        )));
    }
    if config.tol.is_nan() || config.tol <= 0.0 {
        return Err(Error::InvalidConfig("tol must be positive".into()));
    }
    let reg = config.reg;
    let mut gamma = start_point(features);
    let mut value = mle_objective(&gamma, features, reg);
    // fall back to the origin when it is already better than the scaled start
    let origin = DVector::zeros(features.dim());
    let origin_value = mle_objective(&origin, features, reg);
    if origin_value > value {
        gamma = origin;
        value = origin_value;
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = false;
    while iterations < config.max_iters {
        let grad = mle_gradient(&gamma, features, reg);
        if projected_gradient_norm(&gamma, &grad) < config.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = project(&(&gamma + &grad * step));
            let candidate_value = mle_objective(&candidate, features, reg);
            if candidate_value >= value + ARMIJO_C * grad.dot(&(&candidate - &gamma)) {
                accepted = Some((candidate, candidate_value));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, candidate_value)) => {
                gamma = candidate;
                value = candidate_value;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    if !converged && !stalled {
        let grad = mle_gradient(&gamma, features, reg);
        converged = projected_gradient_norm(&gamma, &grad) < config.tol;
    }
    Ok(MleSolution {
        gamma: gamma.as_slice().to_vec(),
        objective: value,
        converged,
        iterations,
    })
}
