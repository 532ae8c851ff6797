//! Built-in classifiers.
//!
//! Both classifiers expose class probabilities so that every query strategy
//! and metric can run on either. Ties always resolve toward the smallest
//! class id or reference index, which keeps every prediction deterministic.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cmp, sq_dist, Scalar};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierSpec {
    Knn {
        k: usize,
    },
    SoftmaxSgd {
        #[serde(default = "defaults::learning_rate")]
        learning_rate: f64,
        #[serde(default = "defaults::epochs")]
        epochs: usize,
        #[serde(default = "defaults::l2")]
        l2: f64,
    },
}

mod defaults {
    pub fn learning_rate() -> f64 {
        0.01
    }
    pub fn epochs() -> usize {
        50
    }
    pub fn l2() -> f64 {
        1e-4
    }
}

impl ClassifierSpec {
    /// Softmax-SGD with the default learning rate 0.01, 50 epochs and l2 1e-4.
    pub fn softmax_default() -> Self {
        ClassifierSpec::SoftmaxSgd {
            learning_rate: defaults::learning_rate(),
            epochs: defaults::epochs(),
            l2: defaults::l2(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ClassifierSpec::Knn { k: 0 } => {
                Err(Error::InvalidClassifier("knn needs k >= 1".into()))
            }
            ClassifierSpec::SoftmaxSgd {
                learning_rate,
                epochs,
                l2,
            } => {
                if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    Err(Error::InvalidClassifier("learning_rate must be > 0".into()))
                } else if epochs == 0 {
                    Err(Error::InvalidClassifier("epochs must be >= 1".into()))
                } else if !(l2 >= 0.0 && l2.is_finite()) {
                    Err(Error::InvalidClassifier("l2 must be >= 0".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams<F> {
    Knn {
        k: usize,
        reference: Array2<F>,
        labels: Vec<usize>,
    },
    /// `weights` is `n_classes x n_features`.
    Softmax { weights: Array2<F>, bias: Vec<F> },
}

/// A fitted classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    n_classes: usize,
    n_features: usize,
    params: ModelParams<F>,
}

impl<F: Scalar> Model<F> {
    /// Reassembles a model from its parameters, checking shapes.
    pub fn from_params(n_classes: usize, n_features: usize, params: ModelParams<F>) -> Result<Self> {
        match &params {
            ModelParams::Knn {
                k,
                reference,
                labels,
            } => {
                if *k == 0 || reference.nrows() == 0 {
                    return Err(Error::Empty("knn reference set"));
                }
                check_dims(reference.ncols(), n_features)?;
                if reference.nrows() != labels.len() {
                    return Err(Error::LengthMismatch(reference.nrows(), labels.len()));
                }
                if labels.iter().any(|&y| y >= n_classes) {
                    return Err(Error::InvalidDataset("knn label out of range".into()));
                }
            }
            ModelParams::Softmax { weights, bias } => {
                check_dims(weights.nrows(), n_classes)?;
                check_dims(weights.ncols(), n_features)?;
                check_dims(bias.len(), n_classes)?;
            }
        }
        Ok(Self {
            n_classes,
            n_features,
            params,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> &ModelParams<F> {
        &self.params
    }
}

fn check_dims(got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Fits `spec` on `features`/`labels`. Softmax-SGD starts from zero weights
/// and reshuffles the rows each epoch from `seed`.
pub fn fit<F: Scalar>(
    spec: &ClassifierSpec,
    features: ArrayView2<'_, F>,
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<Model<F>> {
    spec.validate()?;
    if features.nrows() == 0 {
        return Err(Error::Empty("training set"));
    }
    check_dims(labels.len(), features.nrows())?;
    if labels.iter().any(|&y| y >= n_classes) {
        return Err(Error::InvalidDataset("training label out of range".into()));
    }
    let d = features.ncols();
    let params = match *spec {
        ClassifierSpec::Knn { k } => ModelParams::Knn {
            k,
            reference: features.to_owned(),
            labels: labels.to_vec(),
        },
        ClassifierSpec::SoftmaxSgd {
            learning_rate,
            epochs,
            l2,
        } => {
            let lr = F::lit(learning_rate);
            let l2 = F::lit(l2);
            let mut weights = Array2::zeros((n_classes, d));
            let mut bias = vec![F::zero(); n_classes];
            let mut probs = vec![F::zero(); n_classes];
            let mut order: Vec<usize> = (0..features.nrows()).collect();
            let mut rng = seed::rng(seed);
            for _ in 0..epochs {
                order.shuffle(&mut rng);
                for &i in &order {
                    sgd_step(&mut weights, &mut bias, &mut probs, features.row(i), labels[i], lr, l2);
                }
            }
            ModelParams::Softmax { weights, bias }
        }
    };
    Model::from_params(n_classes, d, params)
}

fn sgd_step<F: Scalar>(
    weights: &mut Array2<F>,
    bias: &mut [F],
    probs: &mut [F],
    x: ArrayView1<'_, F>,
    y: usize,
    lr: F,
    l2: F,
) {
    for (c, p) in probs.iter_mut().enumerate() {
        *p = bias[c] + weights.row(c).dot_generic(&x);
    }
    softmax_in_place(probs);
    for (c, &p) in probs.iter().enumerate() {
        let g = if c == y { p - F::one() } else { p };
        for (w, &xj) in weights.row_mut(c).iter_mut().zip(x.iter()) {
            *w -= lr * (g * xj + l2 * *w);
        }
        bias[c] -= lr * g;
    }
}

trait DotGeneric<F> {
    fn dot_generic(&self, other: &ArrayView1<'_, F>) -> F;
}

impl<F: Scalar> DotGeneric<F> for ArrayView1<'_, F> {
    #[inline]
    fn dot_generic(&self, other: &ArrayView1<'_, F>) -> F {
        self.iter().zip(other.iter()).fold(F::zero(), |a, (&x, &y)| a + x * y)
    }
}

/// Two-class rows use the logistic form, so the smaller probability is the
/// exact complement of the larger one.
fn softmax_in_place<F: Scalar>(z: &mut [F]) {
    if let [a, b] = z {
        let hi = F::one() / (F::one() + (-(*a - *b).abs()).exp());
        let lo = F::one() - hi;
        (*a, *b) = if *a >= *b { (hi, lo) } else { (lo, hi) };
        return;
    }
    let max = z.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Cross-entropy loss of one sample plus `l2 / 2 * ||W||^2`, with its
/// gradient with respect to the weights and the bias.
pub fn softmax_loss_and_gradient<F: Scalar>(
    weights: ArrayView2<'_, F>,
    bias: &[F],
    x: ArrayView1<'_, F>,
    y: usize,
    l2: F,
) -> (F, Array2<F>, Vec<F>) {
    let k = weights.nrows();
    let mut probs: Vec<F> = (0..k)
        .map(|c| bias[c] + weights.row(c).dot_generic(&x))
        .collect();
    softmax_in_place(&mut probs);
    let penalty = weights.iter().fold(F::zero(), |a, &w| a + w * w) * l2 / F::lit(2.0);
    let loss = -probs[y].ln() + penalty;
    let mut grad_w = Array2::zeros(weights.raw_dim());
    let mut grad_b = vec![F::zero(); k];
    for c in 0..k {
        let g = if c == y { probs[c] - F::one() } else { probs[c] };
        grad_b[c] = g;
        for j in 0..weights.ncols() {
            grad_w[[c, j]] = g * x[j] + l2 * weights[[c, j]];
        }
    }
    (loss, grad_w, grad_b)
}

/// Class probabilities, one row per query.
///
/// k-NN rows are neighbor-vote fractions over the `min(k, n_reference)`
/// nearest rows; softmax rows are the softmax of the logits.
pub fn predict_proba<F: Scalar>(model: &Model<F>, features: ArrayView2<'_, F>) -> Result<Array2<F>> {
    check_dims(features.ncols(), model.n_features)?;
    let k_classes = model.n_classes;
    let mut out = Array2::zeros((features.nrows(), k_classes));
    match &model.params {
        ModelParams::Knn {
            k,
            reference,
            labels,
        } => {
            let kk = (*k).min(reference.nrows());
            let share = F::one() / F::lit(kk as f64);
            let mut dists: Vec<(F, usize)> = Vec::with_capacity(reference.nrows());
            for (q, query) in features.rows().into_iter().enumerate() {
                dists.clear();
                dists.extend(
                    reference
                        .rows()
                        .into_iter()
                        .enumerate()
                        .map(|(r, row)| (sq_dist(query.iter().copied(), row.iter().copied()), r)),
                );
                let by_dist = |a: &(F, usize), b: &(F, usize)| cmp(a.0, b.0).then(a.1.cmp(&b.1));
                if kk < dists.len() {
                    dists.select_nth_unstable_by(kk - 1, by_dist);
                }
                for &(_, r) in &dists[..kk] {
                    out[[q, labels[r]]] += share;
                }
            }
        }
        ModelParams::Softmax { weights, bias } => {
            let mut z = vec![F::zero(); k_classes];
            for (q, query) in features.rows().into_iter().enumerate() {
                for c in 0..k_classes {
                    z[c] = bias[c] + weights.row(c).dot_generic(&query);
                }
                softmax_in_place(&mut z);
                for c in 0..k_classes {
                    out[[q, c]] = z[c];
                }
            }
        }
    }
    Ok(out)
}

/// Row-wise argmax; ties go to the smallest class id.
pub fn argmax_rows<F: Scalar>(probs: ArrayView2<'_, F>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn predict<F: Scalar>(model: &Model<F>, features: ArrayView2<'_, F>) -> Result<Vec<usize>> {
    Ok(argmax_rows(predict_proba(model, features)?.view()))
}

/// Label of the Euclidean-nearest reference row; ties go to the lower index.
pub fn nn1_predict<F: Scalar>(
    reference: ArrayView2<'_, F>,
    reference_labels: &[usize],
    query: ArrayView2<'_, F>,
) -> Result<Vec<usize>> {
    if reference.nrows() == 0 {
        return Err(Error::Empty("reference set"));
    }
    check_dims(reference_labels.len(), reference.nrows())?;
    check_dims(query.ncols(), reference.ncols())?;
    Ok(query
        .rows()
        .into_iter()
        .map(|q| {
            let mut best = (F::infinity(), 0);
            for (r, row) in reference.rows().into_iter().enumerate() {
                let d = sq_dist(q.iter().copied(), row.iter().copied());
                if d < best.0 {
                    best = (d, r);
                }
            }
            reference_labels[best.1]
        })
        .collect())
}
