//! Gaussian blob datasets for tests, examples and the acceptance suite.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ColumnOrigin, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub n_features: usize,
    /// Centers are uniform in `[-center_box, center_box]^d`.
    pub center_box: f64,
    pub cluster_std: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::TooFewClasses);
        }
        if self.n_samples < 2 * self.n_classes || self.n_features == 0 {
            return Err(Error::Config(format!(
                "blobs need n_features >= 1 and n_samples >= 2 * n_classes, got {:?}",
                self
            )));
        }
        if !(self.cluster_std >= 0.0 && self.center_box >= 0.0) {
            return Err(Error::Config("blob spreads must be non-negative".into()));
        }
        Ok(())
    }
}

/// Isotropic Gaussian blobs, one per class, with classes assigned round-robin.
pub fn gaussian_blobs<F: Scalar>(spec: &BlobSpec) -> Result<Dataset<F>> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, 0, 0, Purpose::Synthetic));
    let centers: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            (0..spec.n_features)
                .map(|_| rng.random_range(-spec.center_box..=spec.center_box))
                .collect()
        })
        .collect();
    let labels: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.n_classes).collect();
    let mut features = Array2::zeros((spec.n_samples, spec.n_features));
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..spec.n_features {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = F::lit(centers[y][j] + spec.cluster_std * z);
        }
    }
    let meta = (0..spec.n_features)
        .map(|j| ColumnOrigin::NumericStandardized {
            source: format!("x{j}"),
        })
        .collect();
    Dataset::new(features, labels, spec.n_classes, meta)
}
