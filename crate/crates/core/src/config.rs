//! Study configuration files.
//!
//! A study is written in TOML:
//!
//! ```toml
//! seed = 7
//! strategies = ["random", "margin", "wkmeans"]
//!
//! [classifier]
//! kind = "softmax_sgd"
//!
//! [test]
//! mode = "fixed"
//!
//! [split]
//! scheme = "five-by-two-cv"
//!
//! [[datasets]]
//! id = "phishing"
//! start_size = 20
//! batch_size = 50
//! steps = 20
//! source = { kind = "csv", path = "phishing.csv", schema = { default = "numeric", columns = { Result = "label" } } }
//! ```
//!
//! CSV paths are resolved against the directory holding the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::synthetic::{gaussian_blobs, BlobSpec};
use crate::data::{load_csv_dataset, preprocess, Dataset, Schema, SplitScheme};
use crate::engine::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricName;
use crate::models::ClassifierSpec;
use crate::scalar::Scalar;
use crate::strategies::StrategySpec;

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.2;

/// Where evaluation samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum TestMode {
    /// The fold's test half, labeled up front.
    #[default]
    Fixed,
    /// A test set grown from `ceil(holdout_fraction * |batch|)` samples of
    /// every annotated batch, starting from the same share of the initial
    /// labeled set.
    Incremental {
        #[serde(default = "default_holdout")]
        holdout_fraction: f64,
    },
}

fn default_holdout() -> f64 {
    DEFAULT_HOLDOUT_FRACTION
}

/// Number of samples diverted to the test set out of `n` annotated ones.
pub fn diverted_count(holdout_fraction: f64, n: usize) -> usize {
    (holdout_fraction * n as f64).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Csv { path: PathBuf, schema: Schema },
    Blobs(BlobSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub id: String,
    pub start_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub source: DatasetSource,
}

impl DatasetConfig {
    /// Loads and preprocesses the dataset. Relative CSV paths are taken
    /// from `base_dir`.
    pub fn load<F: Scalar>(&self, base_dir: &Path) -> Result<Dataset<F>> {
        match &self.source {
            DatasetSource::Csv { path, schema } => {
                let raw = load_csv_dataset(base_dir.join(path), schema)?;
                preprocess(&raw)
            }
            DatasetSource::Blobs(spec) => gaussian_blobs(spec),
        }
    }
}

fn default_metrics() -> Vec<MetricName> {
    MetricName::PER_ITERATION.to_vec()
}

/// A parsed study: every dataset crossed with every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub strategies: Vec<StrategySpec>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricName>,
    #[serde(default = "ClassifierSpec::softmax_default")]
    pub classifier: ClassifierSpec,
    #[serde(default)]
    pub test: TestMode,
    #[serde(default = "default_split")]
    pub split: SplitScheme,
    pub datasets: Vec<DatasetConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_split() -> SplitScheme {
    SplitScheme::FiveByTwoCv
}

impl StudyConfig {
    /// Reads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_owned()),
            _ => Error::Io(e),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, path, &base)
    }

    /// Parses config text. `origin` only names the source in diagnostics.
    pub fn parse(text: &str, origin: &Path, base_dir: &Path) -> Result<Self> {
        let mut cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: origin.to_owned(),
            message: e.to_string().trim_end().to_owned(),
        })?;
        cfg.base_dir = base_dir.to_owned();
        cfg.validate().map_err(|e| Error::ConfigParse {
            path: origin.to_owned(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        let distinct: BTreeSet<String> = self.strategies.iter().map(|s| s.to_string()).collect();
        if distinct.len() != self.strategies.len() {
            return Err(Error::Config("strategies are listed twice".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("at least one dataset is required".into()));
        }
        let mut ids = BTreeSet::new();
        for d in &self.datasets {
            if !ids.insert(d.id.as_str()) {
                return Err(Error::Config(format!("dataset id '{}' is used twice", d.id)));
            }
        }
        for e in self.experiments() {
            e.validate()?;
        }
        Ok(())
    }

    /// One experiment per (dataset, strategy), datasets outermost.
    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        self.datasets
            .iter()
            .flat_map(|d| {
                self.strategies.iter().map(move |&strategy| ExperimentConfig {
                    dataset: d.id.clone(),
                    classifier: self.classifier,
                    strategy,
                    start_size: d.start_size,
                    batch_size: d.batch_size,
                    steps: d.steps,
                    test_mode: self.test,
                    split: self.split,
                    seed: self.seed,
                    metrics: self.metrics.clone(),
                })
            })
            .collect()
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetConfig> {
        self.datasets.iter().find(|d| d.id == id)
    }

    /// Loads every dataset in declaration order.
    pub fn load_datasets<F: Scalar>(&self) -> Result<Vec<(String, Dataset<F>)>> {
        self.datasets
            .iter()
            .map(|d| Ok((d.id.clone(), d.load(&self.base_dir)?)))
            .collect()
    }

    /// Makes relative CSV paths absolute against `base_dir`, so the config
    /// reads the same data wherever it is loaded from.
    pub fn resolve_paths(&mut self) -> Result<()> {
        for d in &mut self.datasets {
            if let DatasetSource::Csv { path, .. } = &mut d.source {
                if path.is_relative() {
                    *path = std::path::absolute(self.base_dir.join(&*path))?;
                }
            }
        }
        Ok(())
    }

    /// The parsed config as TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the parsed content; comments and layout do not count.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
