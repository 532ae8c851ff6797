//! Accuracy, learning-curve area and the actionable active-learning metrics.
//!
//! * contradiction: share of evaluation samples whose prediction changed
//!   between two consecutive models. Needs no labels and bounds the change
//!   in accuracy from above.
//! * exploration gradient: decrease of the summed distance from each
//!   evaluation sample to its nearest labeled sample.
//! * reverse batch accuracy: accuracy on a queried batch of a model trained
//!   on the labeled test set. Research setting only.
//! * kappa agreement: share of a batch on which the main model agrees with a
//!   1-nearest-neighbor classifier over the labeled set. Raw agreement, not
//!   chance-corrected; it is the label-free stand-in for reverse batch accuracy.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{fit, nn1_predict, predict, ClassifierSpec, Model};
use crate::scalar::{sq_dist, Scalar};

/// Fixed metric vocabulary used in logs and CSV headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricName {
    Accuracy,
    Contradiction,
    ExplorationGradient,
    NnDistanceSum,
    ReverseBatchAccuracy,
    KappaAgreement,
    Aulc,
}

impl MetricName {
    pub const ALL: [MetricName; 7] = [
        MetricName::Accuracy,
        MetricName::Contradiction,
        MetricName::ExplorationGradient,
        MetricName::NnDistanceSum,
        MetricName::ReverseBatchAccuracy,
        MetricName::KappaAgreement,
        MetricName::Aulc,
    ];

    /// Metrics recorded once per iteration (everything but `aulc`).
    pub const PER_ITERATION: [MetricName; 6] = [
        MetricName::Accuracy,
        MetricName::Contradiction,
        MetricName::ExplorationGradient,
        MetricName::NnDistanceSum,
        MetricName::ReverseBatchAccuracy,
        MetricName::KappaAgreement,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::Accuracy => "accuracy",
            MetricName::Contradiction => "contradiction",
            MetricName::ExplorationGradient => "exploration_gradient",
            MetricName::NnDistanceSum => "nn_distance_sum",
            MetricName::ReverseBatchAccuracy => "reverse_batch_accuracy",
            MetricName::KappaAgreement => "kappa_agreement",
            MetricName::Aulc => "aulc",
        }
    }

    /// First iteration at which the metric is defined.
    pub fn first_iteration(&self) -> usize {
        match self {
            MetricName::Accuracy | MetricName::NnDistanceSum | MetricName::Aulc => 0,
            _ => 1,
        }
    }

    /// Whether the metric needs ground-truth labels the practitioner would not have.
    pub fn research_only(&self) -> bool {
        matches!(
            self,
            MetricName::Accuracy | MetricName::ReverseBatchAccuracy | MetricName::Aulc
        )
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_owned()))
    }
}

impl TryFrom<String> for MetricName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricName> for String {
    fn from(m: MetricName) -> String {
        m.as_str().to_owned()
    }
}

/// Values of one metric over contiguous iterations starting at `first_iteration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric: MetricName,
    pub first_iteration: usize,
    pub values: Vec<f64>,
    pub eval_set: String,
}

impl MetricSeries {
    pub fn iterations(&self) -> std::ops::Range<usize> {
        self.first_iteration..self.first_iteration + self.values.len()
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(Error::Empty("prediction vector"));
    }
    Ok(())
}

fn agreement(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    Ok(agreement(predictions, labels))
}

/// Fraction of positions whose prediction differs.
pub fn contradiction(previous: &[usize], current: &[usize]) -> Result<f64> {
    check_lengths(previous.len(), current.len())?;
    Ok(previous.iter().zip(current).filter(|(a, b)| a != b).count() as f64 / previous.len() as f64)
}

/// Sum over `queries` of the Euclidean distance to the nearest row of
/// `features` listed in `reference`.
pub fn nn_distance_sum<F: Scalar>(
    queries: ArrayView2<'_, F>,
    reference: &[usize],
    features: ArrayView2<'_, F>,
) -> Result<F> {
    if reference.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    if queries.ncols() != features.ncols() {
        return Err(Error::DimensionMismatch {
            expected: features.ncols(),
            got: queries.ncols(),
        });
    }
    let mut total = F::zero();
    for q in queries.rows() {
        let mut best = F::infinity();
        for &r in reference {
            let d = sq_dist(q.iter().copied(), features.row(r).iter().copied());
            if d < best {
                best = d;
            }
        }
        total += best.sqrt();
    }
    Ok(total)
}

/// `nn_distance_sum(test, previous) - nn_distance_sum(test, current)`.
///
/// Non-negative whenever `previous` is a subset of `current`, which is
/// checked.
pub fn exploration_gradient<F: Scalar>(
    test: ArrayView2<'_, F>,
    labeled_previous: &[usize],
    labeled_current: &[usize],
    features: ArrayView2<'_, F>,
) -> Result<F> {
    let current: HashSet<usize> = labeled_current.iter().copied().collect();
    if labeled_previous.iter().any(|i| !current.contains(i)) {
        return Err(Error::NotNested);
    }
    let before = nn_distance_sum(test, labeled_previous, features)?;
    let after = nn_distance_sum(test, labeled_current, features)?;
    Ok(before - after)
}

/// Fits `spec` on the labeled test set and scores it on the batch.
pub fn reverse_batch_accuracy<F: Scalar>(
    test_features: ArrayView2<'_, F>,
    test_labels: Option<&[usize]>,
    spec: &ClassifierSpec,
    batch_features: ArrayView2<'_, F>,
    batch_labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<f64> {
    let labels = test_labels.ok_or_else(|| Error::ResearchOnly(MetricName::ReverseBatchAccuracy.to_string()))?;
    if batch_features.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    let model = fit(spec, test_features, labels, n_classes, seed)?;
    reverse_batch_accuracy_with(&model, batch_features, batch_labels)
}

/// Reverse batch accuracy with an already fitted test-set model.
pub fn reverse_batch_accuracy_with<F: Scalar>(
    test_model: &Model<F>,
    batch_features: ArrayView2<'_, F>,
    batch_labels: &[usize],
) -> Result<f64> {
    if batch_features.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    accuracy(&predict(test_model, batch_features)?, batch_labels)
}

/// Share of the batch where `model` and 1-NN over the labeled set agree.
pub fn kappa_agreement<F: Scalar>(
    model: &Model<F>,
    labeled_features: ArrayView2<'_, F>,
    labeled_labels: &[usize],
    batch_features: ArrayView2<'_, F>,
) -> Result<f64> {
    if labeled_features.nrows() == 0 {
        return Err(Error::Empty("labeled set"));
    }
    if batch_features.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    let main = predict(model, batch_features)?;
    let nn = nn1_predict(labeled_features, labeled_labels, batch_features)?;
    Ok(agreement(&main, &nn))
}

/// Trapezoidal area under a curve sampled at unit steps, divided by the
/// span, so a constant curve `c` has area `c`.
pub fn aulc(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort(series.len()));
    }
    let area: f64 = series.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum();
    Ok(area / (series.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ClassifierSpec;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn contradiction_counts() {
        assert_eq!(contradiction(&[1, 2], &[1, 2]).unwrap(), 0.0);
        assert_eq!(contradiction(&[1, 2], &[2, 1]).unwrap(), 1.0);
        assert_eq!(contradiction(&[0, 1, 1, 0], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(matches!(contradiction(&[1], &[1, 2]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn nn_distance_cases() {
        let x = array![[0.0, 0.0], [3.0, 0.0], [1.0, 1.0]];
        let q = x.select(ndarray::Axis(0), &[0, 2]);
        assert_eq!(nn_distance_sum(q.view(), &[0, 2], x.view()).unwrap(), 0.0);
        let q = array![[0.0, 3.0]];
        assert_eq!(nn_distance_sum(q.view(), &[0], x.view()).unwrap(), 3.0);
        assert!(nn_distance_sum(q.view(), &[], x.view()).is_err());
    }

    /// Exhaustive nearest-neighbor distance sum, written independently.
    fn brute_nn_sum(q: &Array2<f64>, refs: &[Vec<f64>]) -> f64 {
        q.rows()
            .into_iter()
            .map(|row| {
                refs.iter()
                    .map(|r| r.iter().zip(row.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    }

    #[test]
    fn nn_distance_matches_brute_force() {
        let mut rng = crate::seed::rng(17);
        let x = Array2::from_shape_fn((7, 3), |_| rng.random_range(-2.0..2.0));
        let q = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
        let refs = [1usize, 4, 6];
        let rows: Vec<Vec<f64>> = refs.iter().map(|&r| x.row(r).to_vec()).collect();
        let got = nn_distance_sum(q.view(), &refs, x.view()).unwrap();
        assert!((got - brute_nn_sum(&q, &rows)).abs() < 1e-12);
    }

    #[test]
    fn exploration_gradient_cases() {
        let x = array![[0.0], [2.0], [10.0]];
        let t = array![[2.0]];
        assert_eq!(exploration_gradient(t.view(), &[0], &[0], x.view()).unwrap(), 0.0);
        assert_eq!(exploration_gradient(t.view(), &[0], &[0, 1], x.view()).unwrap(), 2.0);
        assert!(matches!(exploration_gradient(t.view(), &[2], &[0, 1], x.view()), Err(Error::NotNested)));

        let mut rng = crate::seed::rng(5);
        let x = Array2::from_shape_fn((30, 2), |_| rng.random_range(-5.0..5.0));
        let t = Array2::from_shape_fn((8, 2), |_| rng.random_range(-5.0..5.0));
        let prev = [0usize, 3, 9];
        let cur = [0usize, 3, 9, 12, 20, 29];
        let rows = |ix: &[usize]| ix.iter().map(|&r| x.row(r).to_vec()).collect::<Vec<_>>();
        let want = brute_nn_sum(&t, &rows(&prev)) - brute_nn_sum(&t, &rows(&cur));
        let got = exploration_gradient(t.view(), &prev, &cur, x.view()).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn reverse_batch_accuracy_cases() {
        let test = array![[0.0], [1.0], [5.0], [6.0]];
        let y = [0usize, 0, 1, 1];
        let knn1 = ClassifierSpec::Knn { k: 1 };
        // batch taken from the test set is memorized
        let batch = test.select(ndarray::Axis(0), &[1, 2]);
        let acc = reverse_batch_accuracy(test.view(), Some(&y), &knn1, batch.view(), &[0, 1], 2, 0).unwrap();
        assert_eq!(acc, 1.0);
        // flip whatever the test-set model predicts
        let queries = array![[0.4], [2.0], [5.5], [9.0]];
        let model = fit(&knn1, test.view(), &y, 2, 0).unwrap();
        let flipped: Vec<usize> = predict(&model, queries.view()).unwrap().iter().map(|p| 1 - p).collect();
        let acc = reverse_batch_accuracy(test.view(), Some(&y), &knn1, queries.view(), &flipped, 2, 0).unwrap();
        assert_eq!(acc, 0.0);
        // single-class test set
        let acc = reverse_batch_accuracy(test.view(), Some(&[1, 1, 1, 1]), &knn1, queries.view(), &[1, 1, 1, 1], 2, 0).unwrap();
        assert_eq!(acc, 1.0);
        assert!(matches!(
            reverse_batch_accuracy(test.view(), None, &knn1, queries.view(), &[0, 0, 0, 0], 2, 0),
            Err(Error::ResearchOnly(_))
        ));
        let empty: Array2<f64> = Array2::zeros((0, 1));
        assert!(reverse_batch_accuracy(test.view(), Some(&y), &knn1, empty.view(), &[], 2, 0).is_err());
    }

    #[test]
    fn kappa_cases() {
        let lab = array![[0.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
        let y = [0usize, 1, 2];
        let batch = array![[0.5, 0.2], [3.0, 3.5], [1.0, 3.0], [2.0, 2.0]];
        let knn1 = fit(&ClassifierSpec::Knn { k: 1 }, lab.view(), &y, 3, 0).unwrap();
        assert_eq!(kappa_agreement(&knn1, lab.view(), &y, batch.view()).unwrap(), 1.0);
        let same = fit(&ClassifierSpec::Knn { k: 3 }, lab.view(), &[2, 2, 2], 3, 0).unwrap();
        assert_eq!(kappa_agreement(&same, lab.view(), &[2, 2, 2], batch.view()).unwrap(), 1.0);
    }

    #[test]
    fn kappa_matches_pairwise_recount() {
        let mut rng = crate::seed::rng(23);
        let lab: Array2<f64> = Array2::from_shape_fn((15, 2), |_| rng.random_range(-3.0..3.0));
        let y: Vec<usize> = (0..15).map(|_| rng.random_range(0..3)).collect();
        let batch = Array2::from_shape_fn((12, 2), |_| rng.random_range(-3.0..3.0));
        let model = fit(&ClassifierSpec::Knn { k: 5 }, lab.view(), &y, 3, 0).unwrap();
        let main = predict(&model, batch.view()).unwrap();
        let mut agree = 0;
        for (b, row) in batch.rows().into_iter().enumerate() {
            let (mut best, mut arg) = (f64::INFINITY, 0);
            for (r, l) in lab.rows().into_iter().enumerate() {
                let d: f64 = row.iter().zip(l.iter()).map(|(a, c)| (a - c).powi(2)).sum();
                if d < best {
                    best = d;
                    arg = r;
                }
            }
            agree += usize::from(y[arg] == main[b]);
        }
        let want = agree as f64 / 12.0;
        assert_eq!(kappa_agreement(&model, lab.view(), &y, batch.view()).unwrap(), want);
    }

    #[test]
    fn aulc_cases() {
        assert!((aulc(&[0.8; 10]).unwrap() - 0.8).abs() < 1e-15);
        let lin: Vec<f64> = (0..=10).map(|t| t as f64 / 10.0).collect();
        assert!((aulc(&lin).unwrap() - 0.5).abs() < 1e-15);
        assert!((aulc(&[0.2, 0.6, 1.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(aulc(&[0.5]), Err(Error::SeriesTooShort(1))));
    }

    #[test]
    fn metric_names_are_fixed() {
        for m in MetricName::ALL {
            assert_eq!(m.as_str().parse::<MetricName>().unwrap(), m);
        }
        assert!("Accuracy".parse::<MetricName>().is_err());
    }

    proptest! {
        #[test]
        fn contradiction_bounds_accuracy_change(
            seed in any::<u64>(), n in 1usize..60, k in 2usize..5,
        ) {
            let mut rng = crate::seed::rng(seed);
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let b: Vec<usize> = a.iter().map(|&p| if rng.random_bool(0.3) { rng.random_range(0..k) } else { p }).collect();
            let delta = (accuracy(&b, &y).unwrap() - accuracy(&a, &y).unwrap()).abs();
            prop_assert!(delta <= contradiction(&a, &b).unwrap() + 1e-15);
            prop_assert_eq!(contradiction(&a, &b).unwrap(), contradiction(&b, &a).unwrap());
        }

        #[test]
        fn nn_sum_is_monotone_in_reference(seed in any::<u64>(), extra in 1usize..10) {
            let mut rng = crate::seed::rng(seed);
            let x = Array2::from_shape_fn((20, 2), |_| rng.random_range(-5.0..5.0));
            let t = Array2::from_shape_fn((6, 2), |_| rng.random_range(-5.0..5.0));
            let prev: Vec<usize> = (0..3).collect();
            let cur: Vec<usize> = (0..3 + extra).collect();
            let eg = exploration_gradient(t.view(), &prev, &cur, x.view()).unwrap();
            prop_assert!(eg >= 0.0);
        }

        #[test]
        fn aulc_is_monotone(base in prop::collection::vec(0.0f64..1.0, 2..20), bump in prop::collection::vec(0.0f64..0.5, 20)) {
            let up: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            prop_assert!(aulc(&up).unwrap() >= aulc(&base).unwrap());
        }

        #[test]
        fn accuracy_is_permutation_invariant(seed in any::<u64>(), n in 1usize..30) {
            let mut rng = crate::seed::rng(seed);
            let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
            let ap: Vec<usize> = perm.iter().map(|&i| a[i]).collect();
            let bp: Vec<usize> = perm.iter().map(|&i| b[i]).collect();
            prop_assert_eq!(accuracy(&a, &b).unwrap(), accuracy(&ap, &bp).unwrap());
            prop_assert_eq!(contradiction(&a, &b).unwrap(), contradiction(&ap, &bp).unwrap());
        }
    }
}
