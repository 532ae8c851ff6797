use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("empty file: {0}")]
    EmptyFile(PathBuf),
    #[error("parse error at row {row}, column '{column}': cannot read {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("schema names column '{0}' which is not in the header")]
    UnknownColumn(String),
    #[error("schema must declare exactly one label column, found {0}")]
    LabelColumnCount(usize),
    #[error("fewer than 2 classes in label column")]
    TooFewClasses,
    #[error("class {class} has {count} sample(s); stratified splitting needs at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("start size {start} exceeds training set size {train}")]
    StartSizeTooLarge { start: usize, train: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid classifier spec: {0}")]
    InvalidClassifier(String),

    #[error("k = {k} exceeds the number of points ({n})")]
    TooManyClusters { k: usize, n: usize },
    #[error("all clustering weights are zero")]
    ZeroWeights,
    #[error("top-k of {k} requested from {n} scores")]
    TopKTooLarge { k: usize, n: usize },
    #[error("margin needs at least 2 classes per row")]
    MarginNeedsTwoClasses,
    #[error("strategy '{0}' needs a fitted model")]
    MissingModel(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("previous labeled set is not contained in the current one")]
    NotNested,
    #[error("metric '{0}' is research-only and needs test labels")]
    ResearchOnly(String),
    #[error("series has {0} point(s); at least 2 are needed")]
    SeriesTooShort(usize),
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),

    #[error("invalid config: {0}")]
    Config(String),
    #[error("config file {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("snapshot out of order for cell {cell}: expected t = {expected}, got t = {got}")]
    OutOfOrder {
        cell: String,
        expected: usize,
        got: usize,
    },
    #[error("no snapshot t = {t} for cell {cell}")]
    MissingSnapshot { cell: String, t: usize },
    #[error("config drift: store was created with config {stored}, current config is {current}")]
    ConfigDrift { stored: String, current: String },
    #[error("dataset '{id}' changed: store fingerprint {stored}, current {current}")]
    DatasetDrift {
        id: String,
        stored: String,
        current: String,
    },
    #[error("cell {0} is locked by another writer")]
    Locked(String),
    #[error("duplicate metrics log row: cell {cell}, t = {t}, metric {metric}")]
    DuplicateLogRow {
        cell: String,
        t: usize,
        metric: String,
    },
    #[error("metric '{metric}' cannot be replayed: {reason}")]
    NotReplayable { metric: String, reason: String },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("store is empty")]
    EmptyStore,
    #[error("store is incomplete: {0}")]
    IncompleteStore(String),

    #[error("score table: {0}")]
    ScoreTable(String),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("no critical-value table entry for k = {k}, alpha = {alpha}")]
    CriticalValueRange { k: usize, alpha: f64 },

    #[error("injected failure for cell {0}")]
    Injected(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
