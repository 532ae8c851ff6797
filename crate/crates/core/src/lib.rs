//! Pool-based active learning experiments with actionable metrics.
//!
//! The crate covers the whole experimental loop:
//!
//! * [`data`]: CSV ingestion, one-hot/standardization preprocessing,
//!   stratified replication splits and the labeled/unlabeled pool.
//! * [`models`]: k-NN and softmax-SGD classifiers behind one
//!   fit/predict-probability contract.
//! * [`strategies`]: random, confidence, margin, entropy, k-means and
//!   margin-weighted k-means batch selection.
//! * [`metrics`]: accuracy, contradiction, exploration gradient, reverse
//!   batch accuracy, batch agreement and AULC.
//! * [`engine`]: the fit / query / annotate loop under fixed or incremental
//!   test sets, and the (strategy x fold) experiment matrix.
//! * [`persistence`]: snapshot/resume and post-hoc metric replay.
//! * [`stats`]: Friedman/Nemenyi ranking and Pearson/Spearman correlation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common case.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod models;
pub mod persistence;
pub mod scalar;
pub mod seed;
pub mod stats;
pub mod strategies;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Model64 = models::Model<f64>;
pub type Model32 = models::Model<f32>;
pub type ClusteringResult64 = strategies::ClusteringResult<f64>;
pub type ClusteringResult32 = strategies::ClusteringResult<f32>;
pub type EngineState64 = engine::EngineState<f64>;
pub type EngineState32 = engine::EngineState<f32>;
pub type ScoreTable64 = stats::ScoreTable<f64>;
