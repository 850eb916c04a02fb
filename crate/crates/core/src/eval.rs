//! Metric assembly, Mahalanobis distances and 1NN evaluation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::MleSolution;
use crate::spectral::{DataMatrix, EigenBasis};
use crate::vb::VariationalPosterior;

/// PSD metric `A = Σ γ_l v_l v_lᵀ` over an eigen basis plus the similarity
/// threshold `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    basis: EigenBasis,
    weights: Vec<f64>,
    threshold: f64,
}

impl MetricModel {
    pub fn new(basis: EigenBasis, weights: Vec<f64>, threshold: f64) -> Result<Self> {
        if weights.len() != basis.k() {
            return Err(Error::DimensionMismatch {
                expected: basis.k(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidData("metric weights must be finite and nonnegative".into()));
        }
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(Error::InvalidData("threshold must be finite and nonnegative".into()));
        }
        Ok(Self {
            basis,
            weights,
            threshold,
        })
    }

    /// Unpack `γ = (μ, γ₁, …, γ_K)`.
    pub fn from_augmented(gamma: &[f64], basis: EigenBasis) -> Result<Self> {
        if gamma.len() != basis.k() + 1 {
            return Err(Error::DimensionMismatch {
                expected: basis.k() + 1,
                actual: gamma.len(),
            });
        }
        Self::new(basis, gamma[1..].to_vec(), gamma[0])
    }

    /// Uses the clamped posterior mean.
    pub fn from_posterior(posterior: &VariationalPosterior, basis: EigenBasis) -> Result<Self> {
        Self::from_augmented(posterior.mean.as_slice(), basis)
    }

    pub fn from_mle(solution: &MleSolution, basis: EigenBasis) -> Result<Self> {
        Self::from_augmented(&solution.gamma, basis)
    }

    /// Plain squared Euclidean distance on the raw features.
    pub fn euclidean(d: usize) -> Result<Self> {
        Self::new(EigenBasis::identity(d)?, vec![1.0; d], 0.0)
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Pack back into `(μ, γ₁, …, γ_K)`.
    pub fn augmented(&self) -> Vec<f64> {
        std::iter::once(self.threshold)
            .chain(self.weights.iter().copied())
            .collect()
    }

    /// Same model with every weight multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.basis.clone(),
            self.weights.iter().map(|w| w * factor).collect(),
            self.threshold,
        )
    }

    /// `‖x - z‖²_A`, evaluated in the projected space.
    pub fn distance(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let coords = self.basis.transform_difference(&(x - z));
        coords
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c * c)
            .sum()
    }

    /// Dense `d × d` matrix acting on raw feature differences,
    /// `diag(1/s) V Γ Vᵀ diag(1/s)`.
    pub fn dense_metric(&self) -> DMatrix<f64> {
        let v = self.basis.vectors();
        let inv_scale = DMatrix::from_diagonal(&DVector::from_iterator(
            self.basis.dim(),
            self.basis.scale().iter().map(|s| 1.0 / s),
        ));
        let gamma = DMatrix::from_diagonal(&DVector::from_column_slice(&self.weights));
        let core = v * gamma * v.transpose();
        &inv_scale * core * &inv_scale
    }

    /// Rows mapped to coordinates where the metric is Euclidean.
    fn embed(&self, data: &DataMatrix) -> Result<DMatrix<f64>> {
        let mut p = self.basis.project(data)?;
        for (l, w) in self.weights.iter().enumerate() {
            p.column_mut(l).scale_mut(w.sqrt());
        }
        Ok(p)
    }
}

/// Predict each query's label as that of its nearest training row; ties go to
/// the lowest training index.
pub fn knn_classify(model: &MetricModel, train: &DataMatrix, queries: &DataMatrix) -> Result<Vec<i64>> {
    let labels = train.require_labels()?;
    let train_emb = model.embed(train)?;
    let query_emb = model.embed(queries)?;
    let k = train_emb.ncols();
    Ok((0..query_emb.nrows())
        .into_par_iter()
        .map(|q| {
            let mut best = (f64::INFINITY, 0usize);
            for t in 0..train_emb.nrows() {
                let mut d = 0.0;
                for l in 0..k {
                    let diff = query_emb[(q, l)] - train_emb[(t, l)];
                    d += diff * diff;
                }
                if d < best.0 {
                    best = (d, t);
                }
            }
            labels[best.1]
        })
        .collect())
}

pub fn accuracy(predicted: &[i64], truth: &[i64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidData("accuracy of an empty prediction".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// 1NN accuracy of `model` on labeled `test` rows.
pub fn evaluate(model: &MetricModel, train: &DataMatrix, test: &DataMatrix) -> Result<f64> {
    let predicted = knn_classify(model, train, test)?;
    accuracy(&predicted, test.require_labels()?)
}
