#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use alkit::config::StudyConfig;
use alkit::persistence::{ExperimentStore, LogRow};
use alkit::Dataset64;

pub const STUDY: &str = r#"
seed = 11
strategies = ["random", "margin", "kmeans"]

[classifier]
kind = "knn"
k = 3

[[datasets]]
id = "blobs"
start_size = 12
batch_size = 6
steps = 5
source = { kind = "blobs", n_samples = 240, n_classes = 4, n_features = 3, center_box = 4.0, cluster_std = 1.2, seed = 5 }
"#;

pub fn study(text: &str) -> StudyConfig {
    StudyConfig::parse(text, Path::new("study.toml"), Path::new(".")).unwrap()
}

pub fn datasets(study: &StudyConfig) -> Vec<(String, Dataset64)> {
    study.load_datasets().unwrap()
}

pub fn store(root: &Path, study: &StudyConfig, datasets: &[(String, Dataset64)]) -> ExperimentStore {
    let fps = datasets.iter().map(|(id, d)| (id.clone(), d.fingerprint())).collect();
    ExperimentStore::open_or_create(root, "f64", &study.hash(), fps, &study.to_toml()).unwrap()
}

/// Log rows keyed without their timestamps; values compared bitwise.
pub fn log_values(rows: Vec<LogRow>) -> BTreeMap<(String, usize, String), u64> {
    rows.into_iter()
        .map(|r| ((r.cell, r.iteration, r.metric.to_string()), r.value.to_bits()))
        .collect()
}

/// Every record of every cell with the wall time zeroed, as JSON.
pub fn frozen_records(store: &ExperimentStore) -> BTreeMap<String, Vec<String>> {
    store
        .cells()
        .unwrap()
        .into_iter()
        .map(|c| {
            let recs = store
                .records(&c)
                .unwrap()
                .into_iter()
                .map(|mut r| {
                    r.wall_time = 0.0;
                    serde_json::to_string(&r).unwrap()
                })
                .collect();
            (c, recs)
        })
        .collect()
}
