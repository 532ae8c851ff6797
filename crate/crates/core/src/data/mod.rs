//! Datasets, preprocessing, replication splits and pool state.

mod loader;
mod pool;
mod preprocess;
mod split;
pub mod synthetic;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use loader::{load_csv_dataset, ColumnKind, RawColumn, RawTable, RawValues, Schema};
pub use pool::{init_pool, PoolState, INIT_POOL_RETRIES};
pub use preprocess::preprocess;
pub use split::{make_splits, Fold, SplitPlan, SplitScheme};

/// Where a processed feature column came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "kebab-case")]
pub enum ColumnOrigin {
    NumericStandardized { source: String },
    OneHot { source: String, category: String },
}

/// A dense feature matrix with integer class labels in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    features: Array2<F>,
    labels: Vec<usize>,
    n_classes: usize,
    column_meta: Vec<ColumnOrigin>,
    class_names: Vec<String>,
}

impl<F: Scalar> Dataset<F> {
    /// Builds a dataset, checking every invariant.
    pub fn new(
        features: Array2<F>,
        labels: Vec<usize>,
        n_classes: usize,
        column_meta: Vec<ColumnOrigin>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if n_classes < 2 {
            return Err(Error::TooFewClasses);
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        if column_meta.len() != features.ncols() {
            return Err(Error::InvalidDataset(format!(
                "{} column descriptors for {} columns",
                column_meta.len(),
                features.ncols()
            )));
        }
        let class_names = (0..n_classes).map(|c| c.to_string()).collect();
        Ok(Self {
            features,
            labels,
            n_classes,
            column_meta,
            class_names,
        })
    }

    /// Replaces the default `"0", "1", ...` class names.
    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes {
            return Err(Error::InvalidDataset(format!(
                "{} class names for {} classes",
                names.len(),
                self.n_classes
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn features(&self) -> ArrayView2<'_, F> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn column_meta(&self) -> &[ColumnOrigin] {
        &self.column_meta
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Copies the rows at `indices`, in that order.
    pub fn rows(&self, indices: &[usize]) -> Array2<F> {
        self.features.select(Axis(0), indices)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Content hash of the processed matrix and labels (hex SHA-256).
    ///
    /// Features are hashed as little-endian `f64`, so an `f32` dataset and
    /// its exact `f64` widening share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.features.nrows() as u64).to_le_bytes());
        h.update((self.features.ncols() as u64).to_le_bytes());
        h.update((self.n_classes as u64).to_le_bytes());
        for v in self.features.iter() {
            h.update(v.f64().to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
