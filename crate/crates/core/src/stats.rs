//! Strategy ranking across tasks and metric correlation.
//!
//! Ranks are taken within each task with rank 1 for the highest score; ties
//! share the average of the ranks they span. The Friedman statistic carries
//! the usual tie correction and its p-value comes from the chi-square tail
//! with `k - 1` degrees of freedom (or, optionally, the Iman-Davenport F
//! form). Nemenyi critical distances use the studentized-range quantiles
//! for infinite degrees of freedom divided by `sqrt(2)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::engine::CellId;
use crate::error::{Error, Result};
use crate::metrics::{aulc, MetricName};
use crate::persistence::{CellStatus, ExperimentStore, LogRow};
use crate::scalar::{cmp, Scalar};

/// `q_0.05` for k = 2..=20.
const Q_05: [f64; 19] = [
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354, 3.391,
    3.426, 3.458, 3.489, 3.517, 3.544,
];

/// `q_0.10` for k = 2..=20.
const Q_10: [f64; 19] = [
    1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920, 2.978, 3.030, 3.077, 3.120, 3.159,
    3.196, 3.230, 3.261, 3.291, 3.319,
];

/// Tasks (rows) by strategies (columns); higher values are better.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable<F> {
    tasks: Vec<String>,
    strategies: Vec<String>,
    values: Array2<F>,
}

impl<F: Scalar> ScoreTable<F> {
    pub fn new(tasks: Vec<String>, strategies: Vec<String>, values: Array2<F>) -> Result<Self> {
        if values.dim() != (tasks.len(), strategies.len()) {
            return Err(Error::ScoreTable(format!(
                "{} x {} values for {} tasks and {} strategies",
                values.nrows(),
                values.ncols(),
                tasks.len(),
                strategies.len()
            )));
        }
        if strategies.len() < 2 {
            return Err(Error::ScoreTable("need >= 2 strategies".into()));
        }
        if tasks.len() < 2 {
            return Err(Error::ScoreTable("need >= 2 tasks".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ScoreTable("missing or non-finite score".into()));
        }
        Ok(Self {
            tasks,
            strategies,
            values,
        })
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn strategies(&self) -> &[String] {
        &self.strategies
    }

    pub fn values(&self) -> &Array2<F> {
        &self.values
    }

    /// Per-task ranks, rank 1 for the best score.
    pub fn ranks(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.values.dim());
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let negated: Vec<F> = row.iter().map(|&v| -v).collect();
            for (j, r) in average_ranks(&negated).into_iter().enumerate() {
                out[[i, j]] = r;
            }
        }
        out
    }
}

/// Ascending ranks starting at 1; tied values share their average rank.
pub fn average_ranks<F: Scalar>(values: &[F]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp(values[a], values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FriedmanTest {
    ChiSquare,
    ImanDavenport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub n_tasks: usize,
    pub n_strategies: usize,
    /// Tie-corrected chi-square statistic.
    pub statistic: f64,
    pub p_value: f64,
    pub iman_davenport_statistic: f64,
    pub iman_davenport_p_value: f64,
    pub mean_ranks: Vec<f64>,
}

pub fn friedman_test<F: Scalar>(table: &ScoreTable<F>) -> Result<FriedmanResult> {
    let ranks = table.ranks();
    let (n, k) = ranks.dim();
    let (nf, kf) = (n as f64, k as f64);
    let mean_ranks: Vec<f64> = ranks.columns().into_iter().map(|c| c.sum() / nf).collect();
    let rank_sums_sq: f64 = ranks.columns().into_iter().map(|c| c.sum().powi(2)).sum();
    let mut ties = 0.0;
    for row in table.values.rows() {
        let mut v: Vec<F> = row.to_vec();
        v.sort_by(|a, b| cmp(*a, *b));
        let mut i = 0;
        while i < v.len() {
            let j = v[i..].iter().take_while(|&&x| x == v[i]).count();
            let t = j as f64;
            ties += t * t * t - t;
            i += j;
        }
    }
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums_sq - 3.0 * nf * (kf + 1.0);
    let correction = 1.0 - ties / (nf * kf * (kf * kf - 1.0));
    let statistic = if correction > 0.0 { (raw / correction).max(0.0) } else { 0.0 };
    let df = kf - 1.0;
    let p_value = if statistic > 0.0 {
        ChiSquared::new(df).expect("df >= 1").sf(statistic)
    } else {
        1.0
    };
    let denom = nf * df - statistic;
    let (f_stat, f_p) = if statistic == 0.0 {
        (0.0, 1.0)
    } else if denom <= 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (nf - 1.0) * statistic / denom;
        let dist = FisherSnedecor::new(df, df * (nf - 1.0)).expect("df >= 1");
        (f, dist.sf(f))
    };
    Ok(FriedmanResult {
        n_tasks: n,
        n_strategies: k,
        statistic,
        p_value,
        iman_davenport_statistic: f_stat,
        iman_davenport_p_value: f_p,
        mean_ranks,
    })
}

/// Studentized-range quantile over `sqrt(2)` for `k` strategies.
pub fn nemenyi_q(k: usize, alpha: f64) -> Result<f64> {
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_10
    } else {
        return Err(Error::CriticalValueRange { k, alpha });
    };
    if !(2..=20).contains(&k) {
        return Err(Error::CriticalValueRange { k, alpha });
    }
    Ok(table[k - 2])
}

/// `q_alpha(k) * sqrt(k (k + 1) / (6 N))`.
pub fn nemenyi_cd(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::ScoreTable("need >= 1 task".into()));
    }
    let kf = k as f64;
    Ok(nemenyi_q(k, alpha)? * (kf * (kf + 1.0) / (6.0 * n as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDifference {
    pub better: String,
    pub worse: String,
    pub rank_gap: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    /// Always "1 = best (highest score)".
    pub rank_convention: String,
    pub strategies: Vec<String>,
    pub mean_ranks: Vec<f64>,
    pub n_tasks: usize,
    pub test: FriedmanTest,
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub critical_distance: f64,
    pub null_rejected: bool,
    /// Every strategy pair; empty when the null is not rejected.
    pub pairs: Vec<PairwiseDifference>,
}

/// Friedman test, then Nemenyi pairwise comparisons if the null is rejected.
pub fn rank_strategies<F: Scalar>(table: &ScoreTable<F>, alpha: f64, test: FriedmanTest) -> Result<RankingReport> {
    let fr = friedman_test(table)?;
    let cd = nemenyi_cd(fr.n_strategies, fr.n_tasks, alpha)?;
    let (statistic, p_value) = match test {
        FriedmanTest::ChiSquare => (fr.statistic, fr.p_value),
        FriedmanTest::ImanDavenport => (fr.iman_davenport_statistic, fr.iman_davenport_p_value),
    };
    let null_rejected = p_value <= alpha;
    let mut pairs = Vec::new();
    if null_rejected {
        let k = fr.n_strategies;
        for a in 0..k {
            for b in a + 1..k {
                let (better, worse) = if fr.mean_ranks[a] <= fr.mean_ranks[b] { (a, b) } else { (b, a) };
                let gap = fr.mean_ranks[worse] - fr.mean_ranks[better];
                pairs.push(PairwiseDifference {
                    better: table.strategies[better].clone(),
                    worse: table.strategies[worse].clone(),
                    rank_gap: gap,
                    significant: gap >= cd,
                });
            }
        }
    }
    Ok(RankingReport {
        rank_convention: "1 = best (highest score)".into(),
        strategies: table.strategies.clone(),
        mean_ranks: fr.mean_ranks,
        n_tasks: fr.n_tasks,
        test,
        statistic,
        p_value,
        alpha,
        critical_distance: cd,
        null_rejected,
        pairs,
    })
}

impl RankingReport {
    /// `strategy,mean_rank` rows, best first.
    pub fn ranks_csv(&self) -> String {
        let mut order: Vec<usize> = (0..self.strategies.len()).collect();
        order.sort_by(|&a, &b| cmp(self.mean_ranks[a], self.mean_ranks[b]).then(a.cmp(&b)));
        let mut out = String::from("strategy,mean_rank\n");
        for i in order {
            out.push_str(&format!("{},{}\n", self.strategies[i], self.mean_ranks[i]));
        }
        out
    }

    /// `better,worse,rank_gap,significant` rows.
    pub fn pairs_csv(&self) -> String {
        let mut out = String::from("better,worse,rank_gap,significant\n");
        for p in &self.pairs {
            out.push_str(&format!("{},{},{},{}\n", p.better, p.worse, p.rank_gap, p.significant));
        }
        out
    }
}

impl fmt::Display for RankingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let test = match self.test {
            FriedmanTest::ChiSquare => "Friedman chi-square",
            FriedmanTest::ImanDavenport => "Friedman (Iman-Davenport F)",
        };
        writeln!(f, "{test} over {} tasks: statistic {:.6}, p = {:.6}", self.n_tasks, self.statistic, self.p_value)?;
        writeln!(f, "mean ranks (1 = best):")?;
        for line in self.ranks_csv().lines().skip(1) {
            let (s, r) = line.split_once(',').expect("two columns");
            writeln!(f, "  {s:<16} {:.4}", r.parse::<f64>().expect("number"))?;
        }
        writeln!(f, "critical distance (alpha = {}): {:.6}", self.alpha, self.critical_distance)?;
        if !self.null_rejected {
            return writeln!(f, "null not rejected: no pairwise differences are claimed");
        }
        for p in self.pairs.iter().filter(|p| p.significant) {
            writeln!(f, "  {} > {} (gap {:.4})", p.better, p.worse, p.rank_gap)?;
        }
        Ok(())
    }
}

/// Sample Pearson correlation.
pub fn pearson<F: Scalar>(x: &[F], y: &[F]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|v| v.f64()).sum::<f64>() / n;
    let my = y.iter().map(|v| v.f64()).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a.f64() - mx, b.f64() - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of the average-tie ranks.
pub fn spearman<F: Scalar>(x: &[F], y: &[F]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl CorrelationMethod {
    pub fn apply(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            CorrelationMethod::Pearson => pearson(x, y),
            CorrelationMethod::Spearman => spearman(x, y),
        }
    }
}

impl FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Self::Pearson),
            "spearman" => Ok(Self::Spearman),
            _ => Err(Error::Config(format!("unknown correlation method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    ByDataset,
    ByStrategy,
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by-dataset" => Ok(Self::ByDataset),
            "by-strategy" => Ok(Self::ByStrategy),
            _ => Err(Error::Config(format!("unknown grouping '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub group: String,
    pub n_pairs: usize,
    /// `None` when the correlation is undefined for the group.
    pub value: Option<f64>,
    pub note: Option<String>,
}

/// Per-cell metric series from log rows: cell -> metric -> iteration -> value.
type CellSeries = BTreeMap<String, BTreeMap<MetricName, BTreeMap<usize, f64>>>;

fn by_cell(rows: &[LogRow]) -> CellSeries {
    let mut out: CellSeries = BTreeMap::new();
    for r in rows {
        out.entry(r.cell.clone())
            .or_default()
            .entry(r.metric)
            .or_default()
            .insert(r.iteration, r.value);
    }
    out
}

/// Correlates two per-iteration metrics within each group, pooling the
/// (fold, iteration) pairs of all cells in the group.
pub fn correlate_rows(
    rows: &[LogRow],
    a: MetricName,
    b: MetricName,
    grouping: Grouping,
    method: CorrelationMethod,
) -> Result<Vec<CorrelationRow>> {
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (cell, series) in by_cell(rows) {
        let id: CellId = cell.parse()?;
        let (sa, sb) = match (series.get(&a), series.get(&b)) {
            (Some(sa), Some(sb)) => (sa, sb),
            _ => {
                return Err(Error::NotReplayable {
                    metric: if series.contains_key(&a) { b } else { a }.to_string(),
                    reason: format!("no logged series for cell {cell}; replay it first"),
                })
            }
        };
        let key = match grouping {
            Grouping::ByDataset => id.dataset,
            Grouping::ByStrategy => id.strategy,
        };
        let entry = groups.entry(key).or_default();
        for (t, va) in sa {
            if let Some(vb) = sb.get(t) {
                entry.0.push(*va);
                entry.1.push(*vb);
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyStore);
    }
    Ok(groups
        .into_iter()
        .map(|(group, (x, y))| {
            let n_pairs = x.len();
            match method.apply(&x, &y) {
                Ok(v) => CorrelationRow {
                    group,
                    n_pairs,
                    value: Some(v),
                    note: None,
                },
                Err(e) => CorrelationRow {
                    group,
                    n_pairs,
                    value: None,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect())
}

pub fn correlate_metrics(
    store: &ExperimentStore,
    a: MetricName,
    b: MetricName,
    grouping: Grouping,
    method: CorrelationMethod,
) -> Result<Vec<CorrelationRow>> {
    correlate_rows(&store.read_all_logs()?, a, b, grouping, method)
}

pub fn correlation_csv(rows: &[CorrelationRow]) -> String {
    let mut out = String::from("group,n_pairs,value,note\n");
    for r in rows {
        let value = r.value.map(|v| v.to_string()).unwrap_or_default();
        let note = r.note.as_deref().unwrap_or("").replace(',', ";");
        out.push_str(&format!("{},{},{},{}\n", r.group, r.n_pairs, value, note));
    }
    out
}

/// Area-under-curve scores a ranking can be built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AucMetric {
    /// Accuracy curve, iterations `0..=T`.
    Aulc,
    /// Exploration gradient, iterations `1..=T`.
    ExplorationAuc,
    /// Reverse batch accuracy, iterations `1..=T`.
    ReverseBatchAccuracyAuc,
}

impl AucMetric {
    pub fn base(&self) -> MetricName {
        match self {
            AucMetric::Aulc => MetricName::Accuracy,
            AucMetric::ExplorationAuc => MetricName::ExplorationGradient,
            AucMetric::ReverseBatchAccuracyAuc => MetricName::ReverseBatchAccuracy,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AucMetric::Aulc => "aulc",
            AucMetric::ExplorationAuc => "exploration-auc",
            AucMetric::ReverseBatchAccuracyAuc => "reverse-batch-accuracy-auc",
        }
    }
}

impl FromStr for AucMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AucMetric::Aulc, AucMetric::ExplorationAuc, AucMetric::ReverseBatchAccuracyAuc]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_owned()))
    }
}

/// Rows of a score table: one per dataset (fold mean) or one per fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskLevel {
    Dataset,
    Fold,
}

/// Normalized area under one cell's curve of `metric`.
pub fn cell_auc(series: &BTreeMap<usize, f64>, metric: AucMetric) -> Result<f64> {
    let first = metric.base().first_iteration();
    let values: Vec<f64> = series.range(first..).map(|(_, &v)| v).collect();
    let contiguous = series.range(first..).enumerate().all(|(i, (&t, _))| t == first + i);
    if !contiguous {
        return Err(Error::ScoreTable(format!("{} series has gaps", metric.base())));
    }
    aulc(&values)
}

/// Score table of `metric` from log rows.
pub fn score_table(rows: &[LogRow], metric: AucMetric, level: TaskLevel) -> Result<ScoreTable<f64>> {
    let mut cells: BTreeMap<(String, usize), BTreeMap<String, f64>> = BTreeMap::new();
    let mut strategies = BTreeSet::new();
    for (cell, series) in by_cell(rows) {
        let id: CellId = cell.parse()?;
        let s = series.get(&metric.base()).ok_or_else(|| Error::NotReplayable {
            metric: metric.base().to_string(),
            reason: format!("no logged series for cell {cell}; replay it first"),
        })?;
        strategies.insert(id.strategy.clone());
        cells
            .entry((id.dataset, id.fold))
            .or_default()
            .insert(id.strategy, cell_auc(s, metric)?);
    }
    if cells.is_empty() {
        return Err(Error::EmptyStore);
    }
    let strategies: Vec<String> = strategies.into_iter().collect();
    if strategies.len() < 2 {
        return Err(Error::ScoreTable("need >= 2 strategies".into()));
    }
    let mut rows_out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for ((dataset, fold), by_strategy) in &cells {
        let row: Vec<f64> = strategies
            .iter()
            .map(|s| {
                by_strategy.get(s).copied().ok_or_else(|| {
                    Error::ScoreTable(format!("no {s} run for dataset {dataset}, fold {fold}"))
                })
            })
            .collect::<Result<_>>()?;
        let task = match level {
            TaskLevel::Dataset => dataset.clone(),
            TaskLevel::Fold => format!("{dataset}/f{fold:02}"),
        };
        rows_out.entry(task).or_default().push(row);
    }
    let tasks: Vec<String> = rows_out.keys().cloned().collect();
    let k = strategies.len();
    let mut values = Array2::zeros((tasks.len(), k));
    for (i, rows) in rows_out.values().enumerate() {
        for j in 0..k {
            values[[i, j]] = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
        }
    }
    ScoreTable::new(tasks, strategies, values)
}

/// Score table from a store whose cells all completed.
pub fn score_table_from_store(store: &ExperimentStore, metric: AucMetric, level: TaskLevel) -> Result<ScoreTable<f64>> {
    let cells = store.cells()?;
    if cells.is_empty() {
        return Err(Error::EmptyStore);
    }
    for c in &cells {
        let meta = store.cell_meta(c)?;
        if meta.status != CellStatus::Completed {
            return Err(Error::IncompleteStore(format!("cell {c} is {:?}", meta.status).to_lowercase()));
        }
    }
    score_table(&store.read_all_logs()?, metric, level)
}

/// Quantile of sorted data by linear interpolation between order statistics
/// at position `q * (n - 1)`.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub dataset: String,
    pub strategy: String,
    pub fold: usize,
    pub iteration: usize,
    pub metric: MetricName,
    pub value: f64,
    /// Over all folds at this (dataset, strategy, iteration, metric).
    pub n_folds: usize,
    pub mean: f64,
    pub q10: f64,
    pub q90: f64,
}

/// Long-format learning curves: every logged value with the fold mean and
/// 10th/90th percentiles of its (dataset, strategy, iteration, metric) group.
pub fn curves(rows: &[LogRow]) -> Result<Vec<CurveRow>> {
    type Key = (String, String, MetricName, usize);
    let mut groups: BTreeMap<Key, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        let id: CellId = r.cell.parse()?;
        groups
            .entry((id.dataset, id.strategy, r.metric, r.iteration))
            .or_default()
            .push((id.fold, r.value));
    }
    let mut out = Vec::new();
    for ((dataset, strategy, metric, iteration), mut vals) in groups {
        vals.sort_by_key(|(f, _)| *f);
        let mut sorted: Vec<f64> = vals.iter().map(|(_, v)| *v).collect();
        sorted.sort_by(|a, b| cmp(*a, *b));
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let (q10, q90) = (quantile_linear(&sorted, 0.1), quantile_linear(&sorted, 0.9));
        for (fold, value) in vals {
            out.push(CurveRow {
                dataset: dataset.clone(),
                strategy: strategy.clone(),
                fold,
                iteration,
                metric,
                value,
                n_folds: sorted.len(),
                mean,
                q10,
                q90,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use statrs::distribution::{Continuous, Normal};

    fn table(values: Array2<f64>) -> ScoreTable<f64> {
        let (n, k) = values.dim();
        ScoreTable::new(
            (0..n).map(|i| format!("t{i}")).collect(),
            (0..k).map(|j| format!("s{j}")).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn identical_orderings_give_the_textbook_statistic() {
        let v = Array2::from_shape_fn((10, 3), |(_, j)| 3.0 - j as f64);
        let fr = friedman_test(&table(v)).unwrap();
        assert!((fr.statistic - 20.0).abs() < 1e-12);
        assert!(fr.p_value < 0.001);
        assert_eq!(fr.mean_ranks, vec![1.0, 2.0, 3.0]);
        // hand formula 12N/(k(k+1)) * sum (R_j - (k+1)/2)^2
        let hand = 12.0 * 10.0 / 12.0 * (1.0 + 0.0 + 1.0);
        assert!((fr.statistic - hand).abs() < 1e-12);
    }

    #[test]
    fn identical_columns_are_a_full_tie() {
        let v = Array2::from_shape_fn((5, 4), |(i, _)| i as f64);
        let fr = friedman_test(&table(v.clone())).unwrap();
        assert_eq!(fr.statistic, 0.0);
        assert_eq!(fr.p_value, 1.0);
        assert!(fr.mean_ranks.iter().all(|&r| r == 2.5));
        let rep = rank_strategies(&table(v), 0.05, FriedmanTest::ChiSquare).unwrap();
        assert!(!rep.null_rejected);
        assert!(rep.pairs.is_empty());
    }

    #[test]
    fn tie_correction_matches_rank_variance_form() {
        // with ties, the corrected statistic equals
        // (k-1) * sum_j (R_j - N(k+1)/2)^2 / (sum_ij r_ij^2 - N k (k+1)^2 / 4)
        let v = array![[1.0, 1.0, 2.0, 0.5], [3.0, 2.0, 2.0, 2.0], [0.1, 0.2, 0.3, 0.4], [5.0, 5.0, 5.0, 1.0]];
        let t = table(v);
        let r = t.ranks();
        let (n, k) = (4.0, 4.0);
        let num: f64 = r.columns().into_iter().map(|c| (c.sum() - n * (k + 1.0) / 2.0).powi(2)).sum();
        let den: f64 = r.iter().map(|x| x * x).sum::<f64>() - n * k * (k + 1.0f64).powi(2) / 4.0;
        let expected = (k - 1.0) * num / den;
        let fr = friedman_test(&t).unwrap();
        assert!((fr.statistic - expected).abs() < 1e-12, "{} vs {expected}", fr.statistic);
    }

    #[test]
    fn iman_davenport_form() {
        let v = array![[3.0, 2.0, 1.0], [3.0, 1.0, 2.0], [2.0, 3.0, 1.0], [3.0, 2.0, 1.0]];
        let fr = friedman_test(&table(v)).unwrap();
        let (n, k) = (4.0, 3.0);
        let f = (n - 1.0) * fr.statistic / (n * (k - 1.0) - fr.statistic);
        assert!((fr.iman_davenport_statistic - f).abs() < 1e-12);
        assert!(fr.iman_davenport_p_value > 0.0 && fr.iman_davenport_p_value < 1.0);
    }

    #[test]
    fn critical_distances() {
        assert!((nemenyi_cd(2, 6, 0.05).unwrap() - 1.960 * (6.0f64 / 36.0).sqrt()).abs() < 1e-12);
        assert!((nemenyi_cd(6, 6, 0.05).unwrap() - 3.078).abs() < 1e-3);
        let a = nemenyi_cd(5, 10, 0.10).unwrap();
        assert!((nemenyi_cd(5, 40, 0.10).unwrap() - a / 2.0).abs() < 1e-12);
        assert!(nemenyi_cd(21, 10, 0.05).is_err());
        assert!(nemenyi_cd(1, 10, 0.05).is_err());
        assert!(nemenyi_cd(5, 10, 0.01).is_err());
    }

    #[test]
    fn critical_distance_monotonicity() {
        for alpha in [0.05, 0.10] {
            for k in 2..20 {
                for n in 2..30 {
                    let cd = nemenyi_cd(k, n, alpha).unwrap();
                    assert!(cd > 0.0);
                    assert!(nemenyi_cd(k, n + 1, alpha).unwrap() < cd);
                    assert!(nemenyi_cd(k + 1, n, alpha).unwrap() > cd);
                }
            }
        }
    }

    /// P(range of k standard normals <= r), by trapezoidal quadrature.
    fn range_cdf(k: usize, r: f64) -> f64 {
        let norm = Normal::new(0.0, 1.0).unwrap();
        let (lo, hi, steps) = (-9.0, 9.0, 6000);
        let h = (hi - lo) / steps as f64;
        (0..=steps)
            .map(|i| {
                let z = lo + i as f64 * h;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                w * norm.pdf(z) * (norm.cdf(z) - norm.cdf(z - r)).powi(k as i32 - 1)
            })
            .sum::<f64>()
            * h
            * k as f64
    }

    #[test]
    fn q_table_matches_the_studentized_range() {
        for (alpha, table) in [(0.05, &Q_05), (0.10, &Q_10)] {
            for k in 2..=20 {
                let (mut lo, mut hi) = (0.1, 10.0);
                for _ in 0..60 {
                    let mid = (lo + hi) / 2.0;
                    if range_cdf(k, mid) < 1.0 - alpha {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let q = (lo + hi) / 2.0 / 2f64.sqrt();
                assert!((q - table[k - 2]).abs() < 1.5e-3, "k={k} alpha={alpha}: {q} vs {}", table[k - 2]);
            }
        }
    }

    #[test]
    fn dominant_strategy_is_significantly_better() {
        let mut rng = crate::seed::rng(4);
        let v = Array2::from_shape_fn((30, 5), |(_, j)| {
            use rand::Rng;
            if j == 0 {
                10.0
            } else {
                rng.random_range(0.0..1.0)
            }
        });
        let rep = rank_strategies(&table(v), 0.05, FriedmanTest::ChiSquare).unwrap();
        assert!(rep.null_rejected);
        assert_eq!(rep.mean_ranks[0], 1.0);
        let worst = rep
            .pairs
            .iter()
            .filter(|p| p.better == "s0")
            .max_by(|a, b| a.rank_gap.partial_cmp(&b.rank_gap).unwrap())
            .unwrap();
        assert!(worst.significant && worst.rank_gap >= rep.critical_distance);
    }

    #[test]
    fn report_exports_are_stable() {
        let v = array![[0.9, 0.5, 0.1], [0.8, 0.6, 0.2], [0.7, 0.3, 0.4]];
        let rep = rank_strategies(&table(v), 0.10, FriedmanTest::ChiSquare).unwrap();
        assert_eq!(rep.ranks_csv(), rep.clone().ranks_csv());
        assert!(rep.ranks_csv().starts_with("strategy,mean_rank\ns0,1\n"));
        assert!(rep.to_string().contains("1 = best"));
    }

    #[test]
    fn pearson_and_spearman_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        let e: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &e).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson(&x, &e).unwrap() < 1.0);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn average_ranks_brute_force() {
        let v = [3.0, 1.0, 3.0, 2.0, 3.0, 1.0];
        // rank = 1 + #smaller + (#equal - 1) / 2
        let expected: Vec<f64> = v
            .iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let eq = v.iter().filter(|b| *b == a).count() as f64;
                1.0 + less + (eq - 1.0) / 2.0
            })
            .collect();
        assert_eq!(average_ranks(&v), expected);
    }

    #[test]
    fn linear_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert!((quantile_linear(&s, 0.1) - 1.9).abs() < 1e-12);
        assert!((quantile_linear(&s, 0.9) - 9.1).abs() < 1e-12);
        assert_eq!(quantile_linear(&[4.0; 10], 0.1), 4.0);
    }

    fn log(cell: &str, t: usize, metric: MetricName, value: f64) -> LogRow {
        LogRow {
            cell: cell.into(),
            iteration: t,
            metric,
            value,
            timestamp: 0,
        }
    }

    #[test]
    fn correlation_groups() {
        let mut rows = Vec::new();
        for (s, sign) in [("random", 1.0), ("margin", -1.0)] {
            for f in 0..2 {
                for t in 1..5 {
                    let a = (t * (f + 1)) as f64;
                    let cell = format!("d__{s}__f{f:02}");
                    rows.push(log(&cell, t, MetricName::KappaAgreement, a));
                    rows.push(log(&cell, t, MetricName::ReverseBatchAccuracy, sign * a));
                }
            }
        }
        let by_s = correlate_rows(
            &rows,
            MetricName::KappaAgreement,
            MetricName::ReverseBatchAccuracy,
            Grouping::ByStrategy,
            CorrelationMethod::Pearson,
        )
        .unwrap();
        assert_eq!(by_s.len(), 2);
        assert_eq!(by_s[0].group, "margin");
        assert!((by_s[0].value.unwrap() + 1.0).abs() < 1e-12);
        assert!((by_s[1].value.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(by_s[1].n_pairs, 8);
        let missing = correlate_rows(
            &rows,
            MetricName::KappaAgreement,
            MetricName::Contradiction,
            Grouping::ByDataset,
            CorrelationMethod::Spearman,
        );
        assert!(missing.is_err());
    }

    #[test]
    fn score_tables_from_rows() {
        let mut rows = Vec::new();
        for (s, level) in [("random", 0.5), ("margin", 0.7)] {
            for f in 0..2 {
                for t in 0..3 {
                    rows.push(log(&format!("d__{s}__f{f:02}"), t, MetricName::Accuracy, level + 0.1 * f as f64));
                }
            }
        }
        let t = score_table(&rows, AucMetric::Aulc, TaskLevel::Fold).unwrap();
        assert_eq!(t.tasks(), ["d/f00", "d/f01"]);
        assert_eq!(t.strategies(), ["margin", "random"]);
        assert!((t.values()[[1, 1]] - 0.6).abs() < 1e-12);
        // dataset level collapses to one task, which cannot be ranked
        assert!(score_table(&rows, AucMetric::Aulc, TaskLevel::Dataset).is_err());
        let single: Vec<LogRow> = rows.iter().filter(|r| r.cell.contains("random")).cloned().collect();
        assert!(matches!(
            score_table(&single, AucMetric::Aulc, TaskLevel::Fold),
            Err(Error::ScoreTable(m)) if m.contains("2 strategies")
        ));
    }

    proptest! {
        #[test]
        fn friedman_invariances(seed in any::<u64>(), n in 2usize..12, k in 2usize..7) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let v = Array2::from_shape_fn((n, k), |_| (rng.random_range(0..5) as f64) / 4.0);
            let base = friedman_test(&table(v.clone())).unwrap();
            let total: f64 = base.mean_ranks.iter().sum();
            prop_assert!((total - (k * (k + 1)) as f64 / 2.0).abs() < 1e-9);

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let rows = v.select(ndarray::Axis(0), &perm);
            let fr = friedman_test(&table(rows)).unwrap();
            prop_assert!((fr.statistic - base.statistic).abs() < 1e-9);
            prop_assert_eq!(&fr.mean_ranks, &base.mean_ranks);

            let mut cols: Vec<usize> = (0..k).collect();
            cols.shuffle(&mut rng);
            let fc = friedman_test(&table(v.select(ndarray::Axis(1), &cols))).unwrap();
            for (j, &c) in cols.iter().enumerate() {
                prop_assert!((fc.mean_ranks[j] - base.mean_ranks[c]).abs() < 1e-12);
            }

            let mono = v.mapv(|x| (3.0 * x).exp() - 7.0);
            let fm = friedman_test(&table(mono)).unwrap();
            prop_assert!((fm.statistic - base.statistic).abs() < 1e-9);
        }

        #[test]
        fn spearman_is_pearson_of_ranks(xs in proptest::collection::vec((0i32..6, -50.0f64..50.0), 3..30)) {
            let x: Vec<f64> = xs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = xs.iter().map(|p| p.1).collect();
            match (spearman(&x, &y), pearson(&average_ranks(&x), &average_ranks(&y))) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn pearson_matches_covariance_formula(pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40)) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let n = x.len() as f64;
            let sx: f64 = x.iter().sum();
            let sy: f64 = y.iter().sum();
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            let sxx: f64 = x.iter().map(|a| a * a).sum();
            let syy: f64 = y.iter().map(|b| b * b).sum();
            let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
            prop_assert!((pearson(&x, &y).unwrap() - r).abs() < 1e-9);
        }
    }
}
