//! On-disk experiment store: per-iteration snapshots, resume, metric replay
//! and the append-only metrics log.
//!
//! Layout (see `docs/STORE_FORMAT.md` for the byte-level formats):
//!
//! ```text
//! STORE/
//!   manifest.json            format, precision, config hash, dataset fingerprints
//!   config.toml              the config the store was created with
//!   cells/<cell>/
//!     cell.json              status and number of stored iterations
//!     metrics.jsonl          {cell, iteration, metric, value, timestamp} rows
//!     .lock                  pid of the single writer
//!     t0000/ t0001/ ...      one snapshot per iteration
//! ```
//!
//! A snapshot directory is written under a `.tmp` name and renamed into
//! place before `cell.json` is updated, so an interrupted writer leaves the
//! cell at its previous iteration. Opening a cell removes leftovers and
//! re-appends log rows that were lost between the two steps.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::TestMode;
use crate::data::{Dataset, PoolState};
use crate::engine::{fit_reverse_model, EngineState, ExperimentConfig, IterationRecord};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy, contradiction, exploration_gradient, kappa_agreement, nn_distance_sum,
    reverse_batch_accuracy_with, MetricName, MetricSeries,
};
use crate::models::{Model, ModelParams};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_MAGIC: &[u8; 8] = b"ALMODEL\0";
pub const MODEL_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const CONFIG: &str = "config.toml";
const CELLS: &str = "cells";
const CELL_META: &str = "cell.json";
const LOG: &str = "metrics.jsonl";
const LOCK: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    /// Scalar type of stored models: `"f64"` or `"f32"`.
    pub precision: String,
    pub config_hash: String,
    /// Dataset id to fingerprint of the preprocessed data.
    pub datasets: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeta {
    pub status: CellStatus,
    /// Number of stored snapshots; they cover `t = 0 .. completed_iterations`.
    pub completed_iterations: usize,
    pub truncated: bool,
    pub error: Option<String>,
}

impl Default for CellMeta {
    fn default() -> Self {
        Self {
            status: CellStatus::Running,
            completed_iterations: 0,
            truncated: false,
            error: None,
        }
    }
}

/// One line of a metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub cell: String,
    pub iteration: usize,
    pub metric: MetricName,
    pub value: f64,
    /// Unix time in milliseconds.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateMeta {
    iteration: usize,
    truncated: bool,
}

/// Handle on a store directory.
#[derive(Debug, Clone)]
pub struct ExperimentStore {
    root: PathBuf,
    manifest: Manifest,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

fn encode_indices(indices: &[usize]) -> String {
    indices.iter().map(|i| format!("{i}\n")).collect()
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    fs::read_to_string(path)?
        .lines()
        .map(|l| {
            l.parse().map_err(|_| Error::Corrupt {
                path: path.to_owned(),
                message: format!("bad index {l:?}"),
            })
        })
        .collect()
}

fn snapshot_name(t: usize) -> String {
    format!("t{t:04}")
}

fn parse_snapshot_name(name: &str) -> Option<usize> {
    name.strip_prefix('t').filter(|r| r.bytes().all(|b| b.is_ascii_digit()))?.parse().ok()
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Serializes a model to the `model.bin` format.
pub fn encode_model<F: Scalar>(model: &Model<F>) -> Vec<u8> {
    let (kind, k, rows, payload): (u32, usize, usize, Vec<f64>) = match model.params() {
        ModelParams::Knn {
            k,
            reference,
            labels,
        } => {
            let mut p: Vec<f64> = reference.iter().map(|v| v.f64()).collect();
            p.extend(labels.iter().map(|&y| y as f64));
            (0, *k, reference.nrows(), p)
        }
        ModelParams::Softmax { weights, bias } => {
            let mut p: Vec<f64> = weights.iter().map(|v| v.f64()).collect();
            p.extend(bias.iter().map(|v| v.f64()));
            (1, 0, weights.nrows(), p)
        }
    };
    let mut out = Vec::with_capacity(48 + 8 * payload.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    for v in [model.n_classes(), model.n_features(), k, rows] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses `model.bin` bytes. `path` only names the file in errors.
pub fn decode_model<F: Scalar>(bytes: &[u8], path: &Path) -> Result<Model<F>> {
    let corrupt = |message: &str| Error::Corrupt {
        path: path.to_owned(),
        message: message.to_owned(),
    };
    if bytes.len() < 48 || &bytes[..8] != MODEL_MAGIC {
        return Err(corrupt("missing model header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes")) as usize;
    if u32_at(8) != MODEL_VERSION {
        return Err(corrupt("unsupported model version"));
    }
    let kind = u32_at(12);
    let (n_classes, n_features, k, rows) = (u64_at(16), u64_at(24), u64_at(32), u64_at(40));
    let payload: Vec<f64> = bytes[48..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let extra = match kind {
        0 => rows,
        1 => n_classes,
        _ => return Err(corrupt("unknown model kind")),
    };
    if !(bytes.len() - 48).is_multiple_of(8) || payload.len() != rows * n_features + extra {
        return Err(corrupt("model payload length does not match header"));
    }
    let (matrix, tail) = payload.split_at(rows * n_features);
    let matrix = Array2::from_shape_vec((rows, n_features), matrix.iter().map(|&v| F::lit(v)).collect())
        .map_err(|e| corrupt(&e.to_string()))?;
    let params = if kind == 0 {
        ModelParams::Knn {
            k,
            reference: matrix,
            labels: tail.iter().map(|&y| y as usize).collect(),
        }
    } else {
        ModelParams::Softmax {
            weights: matrix,
            bias: tail.iter().map(|&v| F::lit(v)).collect(),
        }
    };
    Model::from_params(n_classes, n_features, params).map_err(|e| corrupt(&e.to_string()))
}

impl ExperimentStore {
    /// Opens an existing store.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_owned();
        let path = root.join(MANIFEST);
        if !path.exists() {
            return Err(Error::EmptyStore);
        }
        let manifest: Manifest = read_json(&path)?;
        if manifest.format != FORMAT_VERSION {
            return Err(Error::Corrupt {
                path,
                message: format!("unsupported store format {}", manifest.format),
            });
        }
        Ok(Self { root, manifest })
    }

    /// Opens the store at `root`, creating it when absent. An existing store
    /// must match the config hash, precision and dataset fingerprints.
    pub fn open_or_create(
        root: impl AsRef<Path>,
        precision: &str,
        config_hash: &str,
        datasets: BTreeMap<String, String>,
        config_text: &str,
    ) -> Result<Self> {
        let root = root.as_ref();
        if root.join(MANIFEST).exists() {
            let store = Self::open(root)?;
            store.check_config(config_hash)?;
            store.check_precision(precision)?;
            for (id, fp) in &datasets {
                store.check_dataset(id, fp)?;
            }
            return Ok(store);
        }
        fs::create_dir_all(root.join(CELLS))?;
        let manifest = Manifest {
            format: FORMAT_VERSION,
            precision: precision.to_owned(),
            config_hash: config_hash.to_owned(),
            datasets,
        };
        write_atomic(&root.join(CONFIG), config_text.as_bytes())?;
        write_atomic(&root.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(Self {
            root: root.to_owned(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn config_hash(&self) -> &str {
        &self.manifest.config_hash
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG)
    }

    pub fn config_text(&self) -> Result<String> {
        Ok(fs::read_to_string(self.config_path())?)
    }

    pub fn check_config(&self, config_hash: &str) -> Result<()> {
        if self.manifest.config_hash != config_hash {
            return Err(Error::ConfigDrift {
                stored: self.manifest.config_hash.clone(),
                current: config_hash.to_owned(),
            });
        }
        Ok(())
    }

    pub fn check_precision(&self, precision: &str) -> Result<()> {
        if self.manifest.precision != precision {
            return Err(Error::Config(format!(
                "store holds {} models, requested {precision}",
                self.manifest.precision
            )));
        }
        Ok(())
    }

    pub fn check_dataset(&self, id: &str, fingerprint: &str) -> Result<()> {
        match self.manifest.datasets.get(id) {
            Some(fp) if fp == fingerprint => Ok(()),
            stored => Err(Error::DatasetDrift {
                id: id.to_owned(),
                stored: stored.cloned().unwrap_or_else(|| "<absent>".into()),
                current: fingerprint.to_owned(),
            }),
        }
    }

    pub fn cell_dir(&self, cell: &str) -> PathBuf {
        self.root.join(CELLS).join(cell)
    }

    /// Cell names present in the store, sorted.
    pub fn cells(&self) -> Result<Vec<String>> {
        let dir = self.root.join(CELLS);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut names = Vec::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        Ok(names)
    }

    pub fn cell_meta(&self, cell: &str) -> Result<CellMeta> {
        let path = self.cell_dir(cell).join(CELL_META);
        if path.exists() {
            read_json(&path)
        } else {
            Ok(CellMeta::default())
        }
    }

    /// Takes the writer lock on a cell and repairs any interrupted write.
    pub fn open_cell(&self, cell: &str) -> Result<CellWriter<'_>> {
        let dir = self.cell_dir(cell);
        fs::create_dir_all(&dir)?;
        let lock = CellLock::acquire(&dir.join(LOCK), cell)?;
        let meta = self.cell_meta(cell)?;
        let mut writer = CellWriter {
            store: self,
            cell: cell.to_owned(),
            dir,
            meta,
            logged: HashMap::new(),
            _lock: lock,
        };
        writer.recover()?;
        Ok(writer)
    }

    /// Marks a cell failed with `message`.
    pub fn mark_failed(&self, cell: &str, message: &str) -> Result<()> {
        self.open_cell(cell)?.fail(message)
    }

    fn snapshot_dir(&self, cell: &str, t: usize) -> Result<PathBuf> {
        let meta = self.cell_meta(cell)?;
        if t >= meta.completed_iterations {
            return Err(Error::MissingSnapshot {
                cell: cell.to_owned(),
                t,
            });
        }
        Ok(self.cell_dir(cell).join(snapshot_name(t)))
    }

    /// Reads the engine state stored for iteration `t`.
    pub fn restore<F: Scalar>(&self, cell: &str, t: usize, config_hash: &str) -> Result<EngineState<F>> {
        self.check_config(config_hash)?;
        self.check_precision(F::NAME)?;
        let dir = self.snapshot_dir(cell, t)?;
        let meta: StateMeta = read_json(&dir.join("state.json"))?;
        let pool = PoolState::from_parts(
            read_indices(&dir.join("labeled.idx"))?,
            read_indices(&dir.join("unlabeled.idx"))?,
            read_indices(&dir.join("held_out.idx"))?,
            meta.iteration,
        )?;
        let model_path = dir.join("model.bin");
        Ok(EngineState {
            pool,
            test: read_indices(&dir.join("test.idx"))?,
            model: decode_model(&fs::read(&model_path)?, &model_path)?,
            test_predictions: read_indices(&dir.join("test_pred.idx"))?,
            previous_predictions: read_indices(&dir.join("prev_test_pred.idx"))?,
            truncated: meta.truncated,
        })
    }

    pub fn record(&self, cell: &str, t: usize) -> Result<IterationRecord> {
        read_json(&self.snapshot_dir(cell, t)?.join("record.json"))
    }

    /// Every stored record of a cell, in iteration order.
    pub fn records(&self, cell: &str) -> Result<Vec<IterationRecord>> {
        let n = self.cell_meta(cell)?.completed_iterations;
        (0..n).map(|t| self.record(cell, t)).collect()
    }

    /// Complete rows of a cell's metrics log, in append order.
    pub fn read_log(&self, cell: &str) -> Result<Vec<LogRow>> {
        let path = self.cell_dir(cell).join(LOG);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let complete = &text[..text.rfind('\n').map_or(0, |p| p + 1)];
        complete
            .lines()
            .map(|l| {
                serde_json::from_str(l).map_err(|e| Error::Corrupt {
                    path: path.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Rows of every cell's log, cells in name order.
    pub fn read_all_logs(&self) -> Result<Vec<LogRow>> {
        let mut rows = Vec::new();
        for c in self.cells()? {
            rows.extend(self.read_log(&c)?);
        }
        Ok(rows)
    }
}

struct CellLock {
    path: PathBuf,
}

impl CellLock {
    fn acquire(path: &Path, cell: &str) -> Result<Self> {
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id())?;
                    return Ok(Self { path: path.to_owned() });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    if holder.is_some_and(process_gone) {
                        let _ = fs::remove_file(path);
                        continue;
                    }
                    return Err(Error::Locked(cell.to_owned()));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::Locked(cell.to_owned()))
    }
}

impl Drop for CellLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// True when `pid` is known not to be running. Only decidable on Linux;
/// elsewhere a lock is never considered stale.
fn process_gone(pid: u32) -> bool {
    cfg!(target_os = "linux") && pid != std::process::id() && !Path::new(&format!("/proc/{pid}")).exists()
}

/// Exclusive writer for one cell. Dropping it releases the lock.
pub struct CellWriter<'s> {
    store: &'s ExperimentStore,
    cell: String,
    dir: PathBuf,
    meta: CellMeta,
    /// Logged `(iteration, metric)` pairs and their values.
    logged: HashMap<(usize, MetricName), f64>,
    _lock: CellLock,
}

impl CellWriter<'_> {
    pub fn cell(&self) -> &str {
        &self.cell
    }

    pub fn completed_iterations(&self) -> usize {
        self.meta.completed_iterations
    }

    pub fn is_complete(&self) -> bool {
        self.meta.status == CellStatus::Completed
    }

    pub fn truncated(&self) -> bool {
        self.meta.truncated
    }

    fn recover(&mut self) -> Result<()> {
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let stale = name.ends_with(".tmp")
                || parse_snapshot_name(&name).is_some_and(|t| t >= self.meta.completed_iterations);
            if stale {
                if entry.file_type()?.is_dir() {
                    fs::remove_dir_all(entry.path())?;
                } else {
                    fs::remove_file(entry.path())?;
                }
            }
        }
        let log = self.dir.join(LOG);
        if log.exists() {
            let text = fs::read_to_string(&log)?;
            let keep = text.rfind('\n').map_or(0, |p| p + 1);
            if keep != text.len() {
                OpenOptions::new().write(true).open(&log)?.set_len(keep as u64)?;
            }
        }
        for row in self.store.read_log(&self.cell)? {
            self.logged.insert((row.iteration, row.metric), row.value);
        }
        for t in 0..self.meta.completed_iterations {
            let record = self.store.record(&self.cell, t)?;
            for (&m, &v) in &record.metrics {
                self.append_if_absent(t, m, v)?;
            }
        }
        Ok(())
    }

    fn save_meta(&self) -> Result<()> {
        write_atomic(&self.dir.join(CELL_META), serde_json::to_string_pretty(&self.meta)?.as_bytes())
    }

    /// Writes the snapshot for iteration `t`, which must directly follow
    /// the last stored one.
    pub fn snapshot<F: Scalar>(&mut self, t: usize, state: &EngineState<F>, record: &IterationRecord) -> Result<()> {
        let expected = self.meta.completed_iterations;
        if t != expected || record.iteration != t || state.pool.iteration() != t {
            return Err(Error::OutOfOrder {
                cell: self.cell.clone(),
                expected,
                got: t,
            });
        }
        self.store.check_precision(F::NAME)?;
        let name = snapshot_name(t);
        let tmp = self.dir.join(format!("{name}.tmp"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp)?;
        let files: [(&str, Vec<u8>); 9] = [
            ("labeled.idx", encode_indices(state.pool.labeled()).into_bytes()),
            ("unlabeled.idx", encode_indices(state.pool.unlabeled()).into_bytes()),
            ("held_out.idx", encode_indices(state.pool.held_out()).into_bytes()),
            ("test.idx", encode_indices(&state.test).into_bytes()),
            ("test_pred.idx", encode_indices(&state.test_predictions).into_bytes()),
            ("prev_test_pred.idx", encode_indices(&state.previous_predictions).into_bytes()),
            ("model.bin", encode_model(&state.model)),
            (
                "state.json",
                serde_json::to_vec(&StateMeta {
                    iteration: t,
                    truncated: state.truncated,
                })?,
            ),
            ("record.json", serde_json::to_vec_pretty(record)?),
        ];
        for (file, bytes) in &files {
            write_file(&tmp.join(file), bytes)?;
        }
        fs::rename(&tmp, self.dir.join(&name))?;
        self.meta.completed_iterations = t + 1;
        self.meta.status = CellStatus::Running;
        self.meta.truncated |= record.truncated;
        self.save_meta()
    }

    /// Snapshot plus one log row per recorded metric.
    pub fn commit<F: Scalar>(&mut self, state: &EngineState<F>, record: &IterationRecord) -> Result<()> {
        self.snapshot(record.iteration, state, record)?;
        for (&m, &v) in &record.metrics {
            self.append_metric(record.iteration, m, v)?;
        }
        Ok(())
    }

    /// Appends one log row; a second row for the same `(t, metric)` is rejected.
    pub fn append_metric(&mut self, t: usize, metric: MetricName, value: f64) -> Result<()> {
        if self.logged.contains_key(&(t, metric)) {
            return Err(Error::DuplicateLogRow {
                cell: self.cell.clone(),
                t,
                metric: metric.to_string(),
            });
        }
        let row = LogRow {
            cell: self.cell.clone(),
            iteration: t,
            metric,
            value,
            timestamp: now_ms(),
        };
        let mut line = serde_json::to_string(&row)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(LOG))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        self.logged.insert((t, metric), value);
        Ok(())
    }

    /// Appends unless the row exists. An existing row with a different
    /// value means the store no longer matches its snapshots.
    pub fn append_if_absent(&mut self, t: usize, metric: MetricName, value: f64) -> Result<bool> {
        match self.logged.get(&(t, metric)) {
            Some(&v) if v.to_bits() == value.to_bits() => Ok(false),
            Some(&v) => Err(Error::Corrupt {
                path: self.dir.join(LOG),
                message: format!("{metric} at t = {t} is logged as {v}, recomputed {value}"),
            }),
            None => self.append_metric(t, metric, value).map(|_| true),
        }
    }

    pub fn finish(&mut self, truncated: bool) -> Result<()> {
        self.meta.status = CellStatus::Completed;
        self.meta.truncated = truncated;
        self.meta.error = None;
        self.save_meta()
    }

    pub fn fail(&mut self, message: &str) -> Result<()> {
        self.meta.status = CellStatus::Failed;
        self.meta.error = Some(message.to_owned());
        self.save_meta()
    }
}

/// Recomputes `metric` for every stored iteration of `cell` from its
/// snapshots and appends the values missing from the log.
///
/// `fold_index` must be the fold the cell ran on; it fixes the seed of the
/// test-set model behind reverse batch accuracy.
pub fn replay_metric<F: Scalar>(
    store: &ExperimentStore,
    cell: &str,
    metric: MetricName,
    config: &ExperimentConfig,
    dataset: &Dataset<F>,
    fold_index: usize,
) -> Result<MetricSeries> {
    if metric == MetricName::Aulc {
        return Err(Error::NotReplayable {
            metric: metric.to_string(),
            reason: "it summarizes the accuracy series rather than one iteration".into(),
        });
    }
    let mut writer = store.open_cell(cell)?;
    let n = writer.completed_iterations();
    if n == 0 {
        return Err(Error::MissingSnapshot {
            cell: cell.to_owned(),
            t: 0,
        });
    }
    let hash = store.config_hash().to_owned();
    let first = metric.first_iteration();
    let mut previous: Option<EngineState<F>> = None;
    let mut values = Vec::new();
    let mut reverse_fixed: Option<Model<F>> = None;
    for t in 0..n {
        let state: EngineState<F> = store.restore(cell, t, &hash)?;
        if t >= first {
            let test_x = dataset.rows(&state.test);
            let v = match metric {
                MetricName::Accuracy => accuracy(&state.test_predictions, &dataset.labels_of(&state.test))?,
                MetricName::Contradiction => contradiction(&state.previous_predictions, &state.test_predictions)?,
                MetricName::NnDistanceSum => {
                    nn_distance_sum(test_x.view(), state.pool.labeled(), dataset.features())?.f64()
                }
                MetricName::ExplorationGradient => {
                    let prev = previous.as_ref().expect("t >= 1");
                    exploration_gradient(test_x.view(), prev.pool.labeled(), state.pool.labeled(), dataset.features())?
                        .f64()
                }
                MetricName::KappaAgreement => {
                    let prev = previous.as_ref().expect("t >= 1");
                    let batch = store.record(cell, t)?.batch;
                    let labeled = prev.pool.labeled();
                    kappa_agreement(
                        &prev.model,
                        dataset.rows(labeled).view(),
                        &dataset.labels_of(labeled),
                        dataset.rows(&batch).view(),
                    )?
                }
                MetricName::ReverseBatchAccuracy => {
                    let prev = previous.as_ref().expect("t >= 1");
                    let batch = store.record(cell, t)?.batch;
                    let model = match (config.test_mode, &reverse_fixed) {
                        (TestMode::Fixed, Some(m)) => m.clone(),
                        _ => {
                            let m = fit_reverse_model(config, dataset, &prev.test, fold_index)?;
                            if config.test_mode == TestMode::Fixed {
                                reverse_fixed = Some(m.clone());
                            }
                            m
                        }
                    };
                    reverse_batch_accuracy_with(&model, dataset.rows(&batch).view(), &dataset.labels_of(&batch))?
                }
                MetricName::Aulc => unreachable!("rejected above"),
            };
            writer.append_if_absent(t, metric, v)?;
            values.push(v);
        }
        previous = Some(state);
    }
    let eval_set = match config.test_mode {
        TestMode::Fixed => "fold test set".to_owned(),
        TestMode::Incremental { .. } => {
            "accumulated test set (grows between iterations; contradiction compares models on the current set)".to_owned()
        }
    };
    Ok(MetricSeries {
        metric,
        first_iteration: first,
        values,
        eval_set,
    })
}
