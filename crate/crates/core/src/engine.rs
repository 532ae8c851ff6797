//! The active-learning loop and the (dataset, strategy, fold) matrix runner.
//!
//! Iteration 0 fits `h_0` on the initial labeled set. Each later iteration
//! `t` selects a batch with `h_{t-1}`, scores the batch (kappa agreement and
//! reverse batch accuracy), reveals its labels, refits `h_t` from scratch and
//! evaluates it on the test set.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{diverted_count, StudyConfig, TestMode};
use crate::data::{init_pool, make_splits, Dataset, Fold, PoolState, SplitScheme};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy, contradiction, exploration_gradient, kappa_agreement, nn_distance_sum,
    reverse_batch_accuracy_with, MetricName,
};
use crate::models::{fit, predict, ClassifierSpec, Model};
use crate::persistence::ExperimentStore;
use crate::scalar::Scalar;
use crate::seed::{self, Purpose};
use crate::strategies::{select_batch, StrategySpec};

/// One (dataset, strategy) experiment; every fold of the split runs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub classifier: ClassifierSpec,
    pub strategy: StrategySpec,
    pub start_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub test_mode: TestMode,
    pub split: SplitScheme,
    pub seed: u64,
    /// Metrics computed and logged while running.
    pub metrics: Vec<MetricName>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let valid_id = !self.dataset.is_empty()
            && !self.dataset.contains("__")
            && self
                .dataset
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid_id {
            return Err(Error::Config(format!(
                "dataset id '{}' must be non-empty ASCII letters, digits, '-' or '_' without '__'",
                self.dataset
            )));
        }
        if self.steps == 0 || self.batch_size == 0 || self.start_size == 0 {
            return Err(Error::Config(format!(
                "dataset '{}': start_size, batch_size and steps must be >= 1",
                self.dataset
            )));
        }
        if self.metrics.contains(&MetricName::Aulc) {
            return Err(Error::Config(
                "aulc is derived from the accuracy series and cannot be logged per iteration".into(),
            ));
        }
        self.classifier.validate()?;
        self.split.validate()?;
        if let TestMode::Incremental { holdout_fraction } = self.test_mode {
            if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "holdout_fraction must be in (0, 1), got {holdout_fraction}"
                )));
            }
            for (what, n) in [("start_size", self.start_size), ("batch_size", self.batch_size)] {
                if diverted_count(holdout_fraction, n) >= n {
                    return Err(Error::Config(format!(
                        "dataset '{}': incremental mode would divert the whole {what} ({n})",
                        self.dataset
                    )));
                }
            }
        }
        Ok(())
    }

    fn wants(&self, metric: MetricName) -> bool {
        self.metrics.contains(&metric)
    }
}

/// Identifies one run: `<dataset>__<strategy>__f<fold>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub dataset: String,
    pub strategy: String,
    pub fold: usize,
}

impl CellId {
    pub fn new(dataset: &str, strategy: &StrategySpec, fold: usize) -> Self {
        Self {
            dataset: dataset.to_owned(),
            strategy: strategy.to_string(),
            fold,
        }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}__{}__f{:02}", self.dataset, self.strategy, self.fold)
    }
}

impl FromStr for CellId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed cell id '{s}'"));
        let mut parts = s.splitn(3, "__");
        let dataset = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
        let strategy = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
        let fold = parts
            .next()
            .and_then(|p| p.strip_prefix('f'))
            .and_then(|p| p.parse().ok())
            .ok_or_else(bad)?;
        Ok(Self {
            dataset: dataset.to_owned(),
            strategy: strategy.to_owned(),
            fold,
        })
    }
}

/// Everything produced at iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Selected indices in selection order; empty at `t = 0`.
    pub batch: Vec<usize>,
    /// Annotated indices moved to the test set (incremental mode only).
    pub diverted: Vec<usize>,
    pub n_labeled: usize,
    pub n_test: usize,
    pub test_predictions_fingerprint: String,
    /// Metrics defined at this iteration; undefined ones are absent.
    pub metrics: BTreeMap<MetricName, f64>,
    /// Set when this iteration selected a short batch or emptied the pool
    /// before the configured number of steps.
    pub truncated: bool,
    /// Seconds spent on the iteration.
    pub wall_time: f64,
}

impl IterationRecord {
    /// Equality on everything but `wall_time`.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time = other.wall_time;
        a == *other
    }
}

/// SHA-256 over the labels as little-endian `u64`.
pub fn fingerprint_labels(labels: &[usize]) -> String {
    let mut h = Sha256::new();
    for &y in labels {
        h.update((y as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Loop state after iteration `pool.iteration()`.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState<F> {
    pub pool: PoolState,
    /// Evaluation indices: the fold's test half, or the held-out set in
    /// incremental mode. Sorted.
    pub test: Vec<usize>,
    /// `h_t`.
    pub model: Model<F>,
    /// `h_t` on `test`.
    pub test_predictions: Vec<usize>,
    /// `h_{t-1}` on `test`; empty at `t = 0`.
    pub previous_predictions: Vec<usize>,
    pub truncated: bool,
}

/// Drives one experiment on one fold.
pub struct Runner<'a, F: Scalar> {
    config: &'a ExperimentConfig,
    dataset: &'a Dataset<F>,
    fold: &'a Fold,
    fold_index: usize,
    reverse_model: OnceLock<Model<F>>,
}

impl<'a, F: Scalar> Runner<'a, F> {
    pub fn new(
        config: &'a ExperimentConfig,
        dataset: &'a Dataset<F>,
        fold: &'a Fold,
        fold_index: usize,
    ) -> Result<Self> {
        config.validate()?;
        if config.start_size > fold.train.len() {
            return Err(Error::StartSizeTooLarge {
                start: config.start_size,
                train: fold.train.len(),
            });
        }
        Ok(Self {
            config,
            dataset,
            fold,
            fold_index,
            reverse_model: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        self.config
    }

    fn seed(&self, t: usize, purpose: Purpose) -> u64 {
        seed::derive(self.config.seed, self.fold_index as u64, t as u64, purpose)
    }

    fn fit_labeled(&self, labeled: &[usize], t: usize) -> Result<Model<F>> {
        let x = self.dataset.rows(labeled);
        fit(
            &self.config.classifier,
            x.view(),
            &self.dataset.labels_of(labeled),
            self.dataset.n_classes(),
            self.seed(t, Purpose::Fit),
        )
    }

    /// The test-set model behind reverse batch accuracy, cached when the
    /// test set cannot change.
    pub fn reverse_model(&self, test: &[usize]) -> Result<Model<F>> {
        match self.config.test_mode {
            TestMode::Fixed => {
                if let Some(m) = self.reverse_model.get() {
                    return Ok(m.clone());
                }
                let m = fit_reverse_model(self.config, self.dataset, test, self.fold_index)?;
                Ok(self.reverse_model.get_or_init(|| m).clone())
            }
            TestMode::Incremental { .. } => fit_reverse_model(self.config, self.dataset, test, self.fold_index),
        }
    }

    /// Draws the initial pool and fits `h_0`.
    pub fn start(&self) -> Result<(EngineState<F>, IterationRecord)> {
        let clock = Instant::now();
        let cfg = self.config;
        let mut pool = init_pool(
            &self.fold.train,
            self.dataset.labels(),
            cfg.start_size,
            self.seed(0, Purpose::InitPool),
        )?;
        let (test, diverted) = match cfg.test_mode {
            TestMode::Fixed => (self.fold.test.clone(), Vec::new()),
            TestMode::Incremental { holdout_fraction } => {
                let diverted = spread(pool.labeled(), diverted_count(holdout_fraction, cfg.start_size));
                pool.divert_labeled(&diverted)?;
                (pool.held_out().to_vec(), diverted)
            }
        };
        let model = self.fit_labeled(pool.labeled(), 0)?;
        let test_x = self.dataset.rows(&test);
        let test_predictions = predict(&model, test_x.view())?;

        let mut metrics = BTreeMap::new();
        if cfg.wants(MetricName::Accuracy) {
            metrics.insert(
                MetricName::Accuracy,
                accuracy(&test_predictions, &self.dataset.labels_of(&test))?,
            );
        }
        if cfg.wants(MetricName::NnDistanceSum) {
            let s = nn_distance_sum(test_x.view(), pool.labeled(), self.dataset.features())?;
            metrics.insert(MetricName::NnDistanceSum, s.f64());
        }
        let record = IterationRecord {
            iteration: 0,
            batch: Vec::new(),
            diverted,
            n_labeled: pool.labeled().len(),
            n_test: test.len(),
            test_predictions_fingerprint: fingerprint_labels(&test_predictions),
            metrics,
            truncated: false,
            wall_time: clock.elapsed().as_secs_f64(),
        };
        let state = EngineState {
            pool,
            test,
            model,
            test_predictions,
            previous_predictions: Vec::new(),
            truncated: false,
        };
        Ok((state, record))
    }

    /// Whether `state` has reached the last iteration or an empty pool.
    pub fn finished(&self, state: &EngineState<F>) -> bool {
        state.pool.iteration() >= self.config.steps || state.pool.unlabeled().is_empty()
    }

    /// Runs iteration `t = state.iteration + 1`; `None` when finished.
    pub fn step(&self, state: &mut EngineState<F>) -> Result<Option<IterationRecord>> {
        if self.finished(state) {
            return Ok(None);
        }
        let clock = Instant::now();
        let cfg = self.config;
        let ds = self.dataset;
        let t = state.pool.iteration() + 1;

        let batch = select_batch(
            &cfg.strategy,
            Some(&state.model),
            ds,
            &state.pool,
            cfg.batch_size,
            self.seed(t, Purpose::Select),
        )?;
        let batch_x = ds.rows(&batch);
        let labeled_prev = state.pool.labeled().to_vec();

        let mut metrics = BTreeMap::new();
        if cfg.wants(MetricName::KappaAgreement) {
            let k = kappa_agreement(
                &state.model,
                ds.rows(&labeled_prev).view(),
                &ds.labels_of(&labeled_prev),
                batch_x.view(),
            )?;
            metrics.insert(MetricName::KappaAgreement, k);
        }
        if cfg.wants(MetricName::ReverseBatchAccuracy) {
            let m = self.reverse_model(&state.test)?;
            let r = reverse_batch_accuracy_with(&m, batch_x.view(), &ds.labels_of(&batch))?;
            metrics.insert(MetricName::ReverseBatchAccuracy, r);
        }

        let diverted = match cfg.test_mode {
            TestMode::Fixed => Vec::new(),
            TestMode::Incremental { holdout_fraction } => {
                spread(&batch, diverted_count(holdout_fraction, batch.len()))
            }
        };
        let kept: Vec<usize> = batch.iter().copied().filter(|i| !diverted.contains(i)).collect();
        state.pool.annotate(&kept)?;
        state.pool.divert(&diverted)?;
        state.pool.advance();
        let test_changed = !diverted.is_empty();
        if test_changed {
            state.test = state.pool.held_out().to_vec();
        }

        let model = self.fit_labeled(state.pool.labeled(), t)?;
        let test_x = ds.rows(&state.test);
        let previous = if test_changed {
            predict(&state.model, test_x.view())?
        } else {
            std::mem::take(&mut state.test_predictions)
        };
        let current = predict(&model, test_x.view())?;

        if cfg.wants(MetricName::Accuracy) {
            metrics.insert(MetricName::Accuracy, accuracy(&current, &ds.labels_of(&state.test))?);
        }
        if cfg.wants(MetricName::Contradiction) {
            metrics.insert(MetricName::Contradiction, contradiction(&previous, &current)?);
        }
        if cfg.wants(MetricName::ExplorationGradient) {
            let eg = exploration_gradient(test_x.view(), &labeled_prev, state.pool.labeled(), ds.features())?;
            metrics.insert(MetricName::ExplorationGradient, eg.f64());
        }
        if cfg.wants(MetricName::NnDistanceSum) {
            let s = nn_distance_sum(test_x.view(), state.pool.labeled(), ds.features())?;
            metrics.insert(MetricName::NnDistanceSum, s.f64());
        }

        let truncated =
            batch.len() < cfg.batch_size || (state.pool.unlabeled().is_empty() && t < cfg.steps);
        state.truncated |= truncated;
        state.model = model;
        state.previous_predictions = previous;
        state.test_predictions = current;

        Ok(Some(IterationRecord {
            iteration: t,
            batch,
            diverted,
            n_labeled: state.pool.labeled().len(),
            n_test: state.test.len(),
            test_predictions_fingerprint: fingerprint_labels(&state.test_predictions),
            metrics,
            truncated,
            wall_time: clock.elapsed().as_secs_f64(),
        }))
    }
}

/// Fits the classifier on the labeled test set with the fold's fixed
/// reverse-fit seed.
pub fn fit_reverse_model<F: Scalar>(
    config: &ExperimentConfig,
    dataset: &Dataset<F>,
    test: &[usize],
    fold_index: usize,
) -> Result<Model<F>> {
    fit(
        &config.classifier,
        dataset.rows(test).view(),
        &dataset.labels_of(test),
        dataset.n_classes(),
        seed::derive(config.seed, fold_index as u64, 0, Purpose::ReverseFit),
    )
}

/// `n` entries of `items` at positions `floor(i * len / n)`.
fn spread(items: &[usize], n: usize) -> Vec<usize> {
    (0..n).map(|i| items[i * items.len() / n]).collect()
}

/// Runs one experiment on one fold without touching a store.
pub fn run_experiment<F: Scalar>(
    config: &ExperimentConfig,
    dataset: &Dataset<F>,
    fold: &Fold,
    fold_index: usize,
) -> Result<Vec<IterationRecord>> {
    let runner = Runner::new(config, dataset, fold, fold_index)?;
    let (mut state, first) = runner.start()?;
    let mut records = vec![first];
    while let Some(r) = runner.step(&mut state)? {
        records.push(r);
    }
    Ok(records)
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOptions {
    /// Worker threads; 0 uses the available parallelism.
    pub jobs: usize,
    /// Cell id forced to fail, for exercising error paths.
    pub inject_failure: Option<String>,
    /// Shuffles the execution order of the cells with this seed.
    pub order_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Completed,
    Cached,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: CellId,
    pub status: CellStatus,
    pub iterations: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSummary {
    /// Outcomes in cell order: datasets, then strategies, then folds.
    pub outcomes: Vec<CellOutcome>,
}

impl MatrixSummary {
    fn count(&self, pred: impl Fn(&CellStatus) -> bool) -> usize {
        self.outcomes.iter().filter(|o| pred(&o.status)).count()
    }

    pub fn completed(&self) -> usize {
        self.count(|s| *s == CellStatus::Completed)
    }

    pub fn cached(&self) -> usize {
        self.count(|s| *s == CellStatus::Cached)
    }

    pub fn failed(&self) -> usize {
        self.count(|s| matches!(s, CellStatus::Failed(_)))
    }

    pub fn all_cached(&self) -> bool {
        self.cached() == self.outcomes.len()
    }
}

struct CellJob<'a, F> {
    id: CellId,
    config: &'a ExperimentConfig,
    dataset: &'a Dataset<F>,
    fold: Fold,
    fold_index: usize,
}

/// Runs every (experiment, fold) cell of `study` into `store`.
///
/// Completed cells are skipped, partial ones resume from their last
/// snapshot, and a failing cell is marked failed without stopping the
/// others. Outcomes do not depend on execution order.
pub fn run_matrix<F: Scalar>(
    store: &ExperimentStore,
    study: &StudyConfig,
    datasets: &[(String, Dataset<F>)],
    options: &MatrixOptions,
    progress: &(dyn Fn(&CellOutcome) + Sync),
) -> Result<MatrixSummary> {
    use rayon::prelude::*;

    store.check_config(&study.hash())?;
    let experiments = study.experiments();
    let mut plans = BTreeMap::new();
    for (id, ds) in datasets {
        store.check_dataset(id, &ds.fingerprint())?;
        plans.insert(id.as_str(), make_splits(ds, study.split, study.seed)?);
    }
    let mut jobs = Vec::new();
    for e in &experiments {
        let (_, ds) = datasets
            .iter()
            .find(|(id, _)| *id == e.dataset)
            .ok_or_else(|| Error::Config(format!("dataset '{}' is not loaded", e.dataset)))?;
        for (k, fold) in plans[e.dataset.as_str()].folds.iter().enumerate() {
            jobs.push(CellJob {
                id: CellId::new(&e.dataset, &e.strategy, k),
                config: e,
                dataset: ds,
                fold: fold.clone(),
                fold_index: k,
            });
        }
    }
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    if let Some(s) = options.order_seed {
        order.shuffle(&mut seed::rng(s));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut results: Vec<(usize, CellOutcome)> = pool.install(|| {
        order
            .par_iter()
            .map(|&j| {
                let job = &jobs[j];
                let outcome = run_cell(store, job, options).unwrap_or_else(|e| {
                    let message = e.to_string();
                    if !matches!(e, Error::Locked(_)) {
                        let _ = store.mark_failed(&job.id.to_string(), &message);
                    }
                    CellOutcome {
                        cell: job.id.clone(),
                        status: CellStatus::Failed(message),
                        iterations: 0,
                        truncated: false,
                    }
                });
                progress(&outcome);
                (j, outcome)
            })
            .collect()
    });
    results.sort_by_key(|(j, _)| *j);
    Ok(MatrixSummary {
        outcomes: results.into_iter().map(|(_, o)| o).collect(),
    })
}

fn run_cell<F: Scalar>(store: &ExperimentStore, job: &CellJob<'_, F>, options: &MatrixOptions) -> Result<CellOutcome> {
    let name = job.id.to_string();
    let mut cell = store.open_cell(&name)?;
    if cell.is_complete() {
        return Ok(CellOutcome {
            cell: job.id.clone(),
            status: CellStatus::Cached,
            iterations: cell.completed_iterations(),
            truncated: cell.truncated(),
        });
    }
    if options.inject_failure.as_deref() == Some(name.as_str()) {
        return Err(Error::Injected(name));
    }
    let runner = Runner::new(job.config, job.dataset, &job.fold, job.fold_index)?;
    let mut state = match cell.completed_iterations() {
        0 => {
            let (state, record) = runner.start()?;
            cell.commit(&state, &record)?;
            state
        }
        n => store.restore::<F>(&name, n - 1, store.config_hash())?,
    };
    while let Some(record) = runner.step(&mut state)? {
        cell.commit(&state, &record)?;
    }
    cell.finish(state.truncated)?;
    Ok(CellOutcome {
        cell: job.id.clone(),
        status: CellStatus::Completed,
        iterations: cell.completed_iterations(),
        truncated: state.truncated,
    })
}
