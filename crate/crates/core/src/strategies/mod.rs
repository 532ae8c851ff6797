//! Query strategies: which unlabeled samples to annotate next.
//!
//! Uncertainty scores follow the usual convention that a higher score means
//! a more uncertain prediction. Probabilities are sorted in descending order
//! (`p1 >= p2 >= ...`) before scoring:
//!
//! | strategy   | score                    |
//! |------------|--------------------------|
//! | confidence | `1 - p1`                 |
//! | margin     | `1 - (p1 - p2)`          |
//! | entropy    | `-sum p ln p`, `0 ln 0 = 0` |

mod kmeans;

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, nearest_to_centroids, ClusteringResult, MAX_ITER, TOLERANCE};

use crate::data::{Dataset, PoolState};
use crate::error::{Error, Result};
use crate::models::{predict_proba, Model};
use crate::scalar::{cmp, Scalar};
use crate::seed;

pub const DEFAULT_PREFILTER_FACTOR: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Confidence,
    Margin,
    Entropy,
}

/// A query strategy. Written as `random`, `confidence`, `margin`, `entropy`,
/// `kmeans`, `wkmeans` (prefilter factor 10) or `wkmeans(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategySpec {
    Random,
    Uncertainty(UncertaintyKind),
    KMeans,
    WKMeans { prefilter_factor: usize },
}

impl StrategySpec {
    pub fn needs_model(&self) -> bool {
        matches!(self, StrategySpec::Uncertainty(_) | StrategySpec::WKMeans { .. })
    }

    /// Every strategy with its default parameters.
    pub fn all() -> [StrategySpec; 6] {
        [
            StrategySpec::Random,
            StrategySpec::Uncertainty(UncertaintyKind::Confidence),
            StrategySpec::Uncertainty(UncertaintyKind::Margin),
            StrategySpec::Uncertainty(UncertaintyKind::Entropy),
            StrategySpec::KMeans,
            StrategySpec::WKMeans {
                prefilter_factor: DEFAULT_PREFILTER_FACTOR,
            },
        ]
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::Random => f.write_str("random"),
            StrategySpec::Uncertainty(UncertaintyKind::Confidence) => f.write_str("confidence"),
            StrategySpec::Uncertainty(UncertaintyKind::Margin) => f.write_str("margin"),
            StrategySpec::Uncertainty(UncertaintyKind::Entropy) => f.write_str("entropy"),
            StrategySpec::KMeans => f.write_str("kmeans"),
            StrategySpec::WKMeans { prefilter_factor } if *prefilter_factor == DEFAULT_PREFILTER_FACTOR => {
                f.write_str("wkmeans")
            }
            StrategySpec::WKMeans { prefilter_factor } => write!(f, "wkmeans({prefilter_factor})"),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "random" => StrategySpec::Random,
            "confidence" => StrategySpec::Uncertainty(UncertaintyKind::Confidence),
            "margin" => StrategySpec::Uncertainty(UncertaintyKind::Margin),
            "entropy" => StrategySpec::Uncertainty(UncertaintyKind::Entropy),
            "kmeans" => StrategySpec::KMeans,
            "wkmeans" => StrategySpec::WKMeans {
                prefilter_factor: DEFAULT_PREFILTER_FACTOR,
            },
            _ => {
                let factor = s
                    .strip_prefix("wkmeans(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|f| f.trim().parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))?;
                if factor == 0 {
                    return Err(Error::Config("wkmeans prefilter factor must be >= 1".into()));
                }
                StrategySpec::WKMeans {
                    prefilter_factor: factor,
                }
            }
        })
    }
}

impl TryFrom<String> for StrategySpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StrategySpec> for String {
    fn from(s: StrategySpec) -> String {
        s.to_string()
    }
}

/// Per-row uncertainty scores.
pub fn uncertainty_scores<F: Scalar>(kind: UncertaintyKind, probabilities: ArrayView2<'_, F>) -> Result<Vec<F>> {
    if kind == UncertaintyKind::Margin && probabilities.ncols() < 2 {
        return Err(Error::MarginNeedsTwoClasses);
    }
    Ok(probabilities
        .rows()
        .into_iter()
        .map(|row| match kind {
            UncertaintyKind::Confidence => {
                let top = row.iter().copied().fold(F::neg_infinity(), F::max);
                F::one() - top
            }
            UncertaintyKind::Margin => {
                let (mut first, mut second) = (F::neg_infinity(), F::neg_infinity());
                for &p in row.iter() {
                    if p > first {
                        second = first;
                        first = p;
                    } else if p > second {
                        second = p;
                    }
                }
                F::one() - (first - second)
            }
            UncertaintyKind::Entropy => row
                .iter()
                .filter(|&&p| p > F::zero())
                .fold(F::zero(), |acc, &p| acc - p * p.ln()),
        })
        .collect())
}

/// Positions of the `k` largest scores, by descending score then ascending position.
pub fn top_k<F: Scalar>(scores: &[F], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::TopKTooLarge { k, n: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp(scores[b], scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Margin-ranked candidate positions handed to the weighted clustering:
/// the top `prefilter_factor * batch` scores, capped at the pool size.
pub fn wkmeans_candidates<F: Scalar>(margin_scores: &[F], batch: usize, prefilter_factor: usize) -> Result<Vec<usize>> {
    let m = prefilter_factor.saturating_mul(batch).min(margin_scores.len());
    top_k(margin_scores, m)
}

/// Chooses up to `batch_size` distinct unlabeled indices.
pub fn select_batch<F: Scalar>(
    strategy: &StrategySpec,
    model: Option<&Model<F>>,
    dataset: &Dataset<F>,
    pool: &PoolState,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let unlabeled = pool.unlabeled();
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabeled pool"));
    }
    let n = batch_size.min(unlabeled.len());
    let model = match (strategy.needs_model(), model) {
        (true, None) => return Err(Error::MissingModel(strategy.to_string())),
        (_, m) => m,
    };

    let positions: Vec<usize> = match *strategy {
        StrategySpec::Random => {
            let mut rng = seed::rng(seed);
            rand::seq::index::sample(&mut rng, unlabeled.len(), n).into_vec()
        }
        StrategySpec::Uncertainty(kind) => {
            let probs = predict_proba(model.expect("checked above"), dataset.rows(unlabeled).view())?;
            top_k(&uncertainty_scores(kind, probs.view())?, n)?
        }
        StrategySpec::KMeans => {
            let points = dataset.rows(unlabeled);
            let clusters = kmeans(points.view(), n, None, seed)?;
            nearest_to_centroids(points.view(), clusters.centroids.view())
        }
        StrategySpec::WKMeans { prefilter_factor } => {
            let probs = predict_proba(model.expect("checked above"), dataset.rows(unlabeled).view())?;
            let scores = uncertainty_scores(UncertaintyKind::Margin, probs.view())?;
            let candidates = wkmeans_candidates(&scores, n, prefilter_factor)?;
            let weights: Vec<F> = candidates.iter().map(|&c| scores[c]).collect();
            let all_zero = weights.iter().all(|&w| w == F::zero());
            let cand_idx: Vec<usize> = candidates.iter().map(|&c| unlabeled[c]).collect();
            let points = dataset.rows(&cand_idx);
            let clusters = kmeans(points.view(), n, (!all_zero).then_some(&weights[..]), seed)?;
            nearest_to_centroids(points.view(), clusters.centroids.view())
                .into_iter()
                .map(|p| candidates[p])
                .collect()
        }
    };
    Ok(positions.into_iter().map(|p| unlabeled[p]).collect())
}
