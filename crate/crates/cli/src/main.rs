//! `alkit`: run, resume, replay and analyze active learning experiments.
//!
//! Exit status: 0 on success, 1 when a cell failed or the store cannot
//! answer the request (empty, incomplete, corrupt), 2 on configuration,
//! drift or usage errors.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use alkit::config::StudyConfig;
use alkit::data::Dataset;
use alkit::engine::{run_matrix, CellId, CellOutcome, CellStatus, MatrixOptions};
use alkit::metrics::MetricName;
use alkit::persistence::{replay_metric, ExperimentStore};
use alkit::stats::{
    correlate_metrics, correlation_csv, curves, rank_strategies, score_table_from_store, AucMetric,
    CorrelationMethod, FriedmanTest, Grouping, TaskLevel,
};
use alkit::{Error, Scalar};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "alkit", version, about = "Pool-based active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (dataset, strategy, fold) cell of a config into a store.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        jobs: JobsArg,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
        #[arg(long, hide = true)]
        inject_failure: Option<String>,
    },
    /// Finish the cells of an existing store using its saved config.
    Resume {
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        jobs: JobsArg,
        #[arg(long, hide = true)]
        inject_failure: Option<String>,
    },
    /// Recompute a metric from snapshots and log the missing values.
    Replay {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        metric: String,
    },
    /// Friedman test and Nemenyi ranking of strategies on an AUC metric.
    Rank {
        #[command(flatten)]
        store: StoreArg,
        /// aulc, exploration-auc or reverse-batch-accuracy-auc
        #[arg(long)]
        metric: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Rank each (dataset, fold) pair instead of fold means per dataset.
        #[arg(long)]
        fold_level: bool,
        /// Use the Iman-Davenport F statistic for the omnibus test.
        #[arg(long)]
        iman_davenport: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Correlate two logged metrics per dataset or per strategy.
    Correlate {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, default_value = "spearman")]
        method: String,
        #[arg(long, default_value = "by-dataset")]
        group: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write curves, batches or the metrics log as CSV.
    Export {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, value_enum)]
        what: ExportKind,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct StoreArg {
    /// Store directory.
    #[arg(short = 's', long = "store", env = "ALKIT_STORE")]
    path: PathBuf,
}

#[derive(clap::Args)]
struct JobsArg {
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "ALKIT_JOBS", default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Curves,
    Batches,
    Log,
}

/// Command failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ConfigParse { .. }
            | Error::Config(_)
            | Error::ConfigDrift { .. }
            | Error::DatasetDrift { .. }
            | Error::MissingFile(_)
            | Error::UnknownMetric(_)
            | Error::CriticalValueRange { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CmdResult = Result<(), Failure>;

/// Like `println!`, but a closed stdout (say, piped into `head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    };
}

fn say_raw(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            store,
            jobs,
            precision,
            inject_failure,
        } => run(&config, &store.path, jobs.jobs, precision, inject_failure),
        Command::Resume {
            store,
            jobs,
            inject_failure,
        } => resume(&store.path, jobs.jobs, inject_failure),
        Command::Replay { store, metric } => replay(&store.path, &metric),
        Command::Rank {
            store,
            metric,
            alpha,
            fold_level,
            iman_davenport,
            out,
        } => rank(&store.path, &metric, alpha, fold_level, iman_davenport, out),
        Command::Correlate {
            store,
            a,
            b,
            method,
            group,
            out,
        } => correlate(&store.path, &a, &b, &method, &group, out),
        Command::Export { store, what, out } => export(&store.path, what, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(config: &Path, root: &Path, jobs: usize, precision: Precision, inject: Option<String>) -> CmdResult {
    let mut study = StudyConfig::load(config)?;
    study.resolve_paths()?;
    match precision {
        Precision::F32 => run_study::<f32>(&study, root, jobs, inject),
        Precision::F64 => run_study::<f64>(&study, root, jobs, inject),
    }
}

fn resume(root: &Path, jobs: usize, inject: Option<String>) -> CmdResult {
    let store = ExperimentStore::open(root)?;
    let study = stored_study(&store)?;
    match store.manifest().precision.as_str() {
        "f32" => run_study::<f32>(&study, root, jobs, inject),
        _ => run_study::<f64>(&study, root, jobs, inject),
    }
}

fn stored_study(store: &ExperimentStore) -> Result<StudyConfig, Failure> {
    Ok(StudyConfig::parse(&store.config_text()?, &store.config_path(), store.root())?)
}

fn run_study<F: Scalar>(study: &StudyConfig, root: &Path, jobs: usize, inject: Option<String>) -> CmdResult {
    let datasets = study.load_datasets::<F>()?;
    let fingerprints = datasets.iter().map(|(id, d)| (id.clone(), d.fingerprint())).collect();
    let store = ExperimentStore::open_or_create(root, F::NAME, &study.hash(), fingerprints, &study.to_toml())?;
    let total = study.experiments().len() * study.split.n_folds();
    let done = AtomicUsize::new(0);
    let width = total.to_string().len();
    let progress = |o: &CellOutcome| {
        let n = done.fetch_add(1, Ordering::SeqCst) + 1;
        let status = match &o.status {
            CellStatus::Completed => format!("completed, {} iterations", o.iterations),
            CellStatus::Cached => "cached".to_owned(),
            CellStatus::Failed(msg) => format!("FAILED: {msg}"),
        };
        let truncated = if o.truncated { " (truncated)" } else { "" };
        say!("[{n:>width$}/{total}] {} {status}{truncated}", o.cell);
    };
    let options = MatrixOptions {
        jobs,
        inject_failure: inject,
        order_seed: None,
    };
    let summary = run_matrix(&store, study, &datasets, &options, &progress)?;
    if summary.all_cached() {
        say!("all cells cached");
    } else {
        say!(
            "{} cells: {} completed, {} cached, {} failed",
            summary.outcomes.len(),
            summary.completed(),
            summary.cached(),
            summary.failed()
        );
    }
    if summary.failed() > 0 {
        return Err(Failure {
            code: 1,
            message: format!("{} cell(s) failed; rerun `alkit resume` to retry them", summary.failed()),
        });
    }
    Ok(())
}

fn replay(root: &Path, metric: &str) -> CmdResult {
    let metric: MetricName = metric.parse()?;
    let store = ExperimentStore::open(root)?;
    let study = stored_study(&store)?;
    match store.manifest().precision.as_str() {
        "f32" => replay_store::<f32>(&store, &study, metric),
        _ => replay_store::<f64>(&store, &study, metric),
    }
}

fn replay_store<F: Scalar>(store: &ExperimentStore, study: &StudyConfig, metric: MetricName) -> CmdResult {
    let datasets: Vec<(String, Dataset<F>)> = study.load_datasets()?;
    let cells = store.cells()?;
    if cells.is_empty() {
        return Err(Error::EmptyStore.into());
    }
    let experiments = study.experiments();
    for cell in cells {
        let id: CellId = cell.parse()?;
        let config = experiments
            .iter()
            .find(|e| e.dataset == id.dataset && e.strategy.to_string() == id.strategy)
            .ok_or_else(|| Error::Config(format!("cell {cell} is not part of the stored config")))?;
        let (_, dataset) = datasets
            .iter()
            .find(|(d, _)| *d == id.dataset)
            .expect("every configured dataset is loaded");
        let series = replay_metric(store, &cell, metric, config, dataset, id.fold)?;
        let mean = series.values.iter().sum::<f64>() / series.values.len().max(1) as f64;
        say!(
            "{cell} {metric}: {} values from t = {}, mean {mean:.6} ({})",
            series.values.len(),
            series.first_iteration,
            series.eval_set
        );
    }
    Ok(())
}

fn report_dir(store: &Path, out: Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = out.unwrap_or_else(|| store.join("reports"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn rank(
    root: &Path,
    metric: &str,
    alpha: f64,
    fold_level: bool,
    iman_davenport: bool,
    out: Option<PathBuf>,
) -> CmdResult {
    let metric: AucMetric = metric.parse()?;
    let store = ExperimentStore::open(root)?;
    let level = if fold_level { TaskLevel::Fold } else { TaskLevel::Dataset };
    let test = if iman_davenport {
        FriedmanTest::ImanDavenport
    } else {
        FriedmanTest::ChiSquare
    };
    let table = score_table_from_store(&store, metric, level).map_err(|e| match e {
        Error::ScoreTable(m) if !fold_level && m.contains("tasks") => Failure {
            code: 1,
            message: format!("score table: {m} (one dataset: pass --fold-level to rank its folds)"),
        },
        e => e.into(),
    })?;
    let report = rank_strategies(&table, alpha, test)?;
    let dir = report_dir(root, out)?;
    let stem = format!("rank_{}", metric.as_str());
    let text = report.to_string();
    fs::write(dir.join(format!("{stem}.txt")), &text)?;
    fs::write(dir.join(format!("{stem}_ranks.csv")), report.ranks_csv())?;
    fs::write(dir.join(format!("{stem}_pairs.csv")), report.pairs_csv())?;
    say_raw(&text);
    Ok(())
}

fn correlate(root: &Path, a: &str, b: &str, method: &str, group: &str, out: Option<PathBuf>) -> CmdResult {
    let (a, b): (MetricName, MetricName) = (a.parse()?, b.parse()?);
    let method: CorrelationMethod = method.parse()?;
    let grouping: Grouping = group.parse()?;
    let store = ExperimentStore::open(root)?;
    let rows = correlate_metrics(&store, a, b, grouping, method)?;
    let csv = correlation_csv(&rows);
    let dir = report_dir(root, out)?;
    let method_name = match method {
        CorrelationMethod::Pearson => "pearson",
        CorrelationMethod::Spearman => "spearman",
    };
    fs::write(dir.join(format!("correlate_{a}_{b}_{method_name}_{group}.csv")), &csv)?;
    say_raw(&csv);
    Ok(())
}

fn export(root: &Path, what: ExportKind, out: Option<PathBuf>) -> CmdResult {
    let store = ExperimentStore::open(root)?;
    let cells = store.cells()?;
    if cells.is_empty() {
        return Err(Error::EmptyStore.into());
    }
    let dir = report_dir(root, out)?;
    let (name, csv) = match what {
        ExportKind::Curves => ("curves.csv", curves_csv(&store)?),
        ExportKind::Batches => ("batches.csv", batches_csv(&store, &cells)?),
        ExportKind::Log => ("log.csv", log_csv(&store)?),
    };
    let path = dir.join(name);
    fs::write(&path, csv)?;
    say!("wrote {}", path.display());
    Ok(())
}

fn curves_csv(store: &ExperimentStore) -> Result<String, Failure> {
    let mut out = String::from("dataset,strategy,fold,iteration,metric,value,n_folds,mean,q10,q90\n");
    for r in curves(&store.read_all_logs()?)? {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.dataset, r.strategy, r.fold, r.iteration, r.metric, r.value, r.n_folds, r.mean, r.q10, r.q90
        )
        .unwrap();
    }
    Ok(out)
}

fn batches_csv(store: &ExperimentStore, cells: &[String]) -> Result<String, Failure> {
    let mut out = String::from("dataset,strategy,fold,iteration,role,position,sample\n");
    for cell in cells {
        let id: CellId = cell.parse()?;
        for r in store.records(cell)? {
            for (role, samples) in [("batch", &r.batch), ("diverted", &r.diverted)] {
                for (pos, s) in samples.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{},{role},{pos},{s}",
                        id.dataset, id.strategy, id.fold, r.iteration
                    )
                    .unwrap();
                }
            }
        }
    }
    Ok(out)
}

fn log_csv(store: &ExperimentStore) -> Result<String, Failure> {
    let mut rows = store.read_all_logs()?;
    rows.sort_by(|x, y| (&x.cell, x.iteration, x.metric).cmp(&(&y.cell, y.iteration, y.metric)));
    let mut out = String::from("cell,iteration,metric,value,timestamp_ms\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.cell, r.iteration, r.metric, r.value, r.timestamp).unwrap();
    }
    Ok(out)
}
