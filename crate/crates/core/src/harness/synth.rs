//! Reproducible Gaussian-cluster datasets.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::DataMatrix;

/// Isotropic Gaussian clusters. Class `c` is centered at
/// `separation * (1 + c / dim) * e_{c mod dim}`, so the first classes sit on
/// the vertices of a scaled simplex and all means stay distinct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Standard deviation of every coordinate around the class mean.
    pub spread: f64,
    pub separation: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 60,
            dim: 10,
            spread: 1.0,
            separation: 3.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class < 2 || self.dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "synthetic spec needs >= 2 classes, >= 2 per class and dim >= 1, got {self:?}"
            )));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) || !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidConfig(
                "spread must be >= 0 and separation > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        let radius = self.separation * (1.0 + (class / self.dim) as f64);
        mean[class % self.dim] = radius;
        mean
    }
}

/// Rows are grouped by class; labels are `0..classes`.
pub fn synth_data(spec: &SynthSpec, seed: u64) -> Result<DataMatrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = spec.classes * spec.per_class;
    let mut values = DMatrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..spec.classes {
        let mean = spec.class_mean(class);
        for r in 0..spec.per_class {
            let row = class * spec.per_class + r;
            for (c, m) in mean.iter().enumerate() {
                values[(row, c)] = m + spec.spread * noise.sample(&mut rng);
            }
            labels.push(class as i64);
        }
    }
    DataMatrix::new(values, Some(labels))
}
