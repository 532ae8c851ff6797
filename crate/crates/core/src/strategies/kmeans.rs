use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{sq_dist, Scalar};
use crate::seed;

pub const MAX_ITER: usize = 300;
pub const TOLERANCE: f64 = 1e-4;
/// Independent k-means++ starts; the lowest final inertia wins.
pub const N_INIT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult<F> {
    pub centroids: Array2<F>,
    pub assignment: Vec<usize>,
    /// Weighted sum of squared distances to the assigned centroid.
    pub inertia: F,
    /// Inertia after initialization and after every accepted Lloyd step.
    pub inertia_history: Vec<F>,
}

/// Weighted k-means: [`N_INIT`] runs of k-means++ seeding followed by Lloyd
/// iterations until the relative inertia improvement drops below
/// [`TOLERANCE`] or [`MAX_ITER`] steps have run. A step that would raise
/// inertia is rejected and ends the loop, so `inertia_history` (that of the
/// returned run) is non-increasing. Inertia ties go to the earlier run.
pub fn kmeans<F: Scalar>(
    points: ArrayView2<'_, F>,
    k: usize,
    weights: Option<&[F]>,
    seed: u64,
) -> Result<ClusteringResult<F>> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::Empty("cluster set"));
    }
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    let w: Vec<F> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::LengthMismatch(w.len(), n));
            }
            if w.iter().any(|&v| v < F::zero() || !v.is_finite()) {
                return Err(Error::InvalidDataset("clustering weights must be finite and >= 0".into()));
            }
            if w.iter().all(|&v| v == F::zero()) {
                return Err(Error::ZeroWeights);
            }
            w.to_vec()
        }
        None => vec![F::one(); n],
    };

    let mut best: Option<ClusteringResult<F>> = None;
    for run in 0..N_INIT as u64 {
        let r = lloyd(points, k, &w, seed::mix(&[seed, run]));
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one run"))
}

fn lloyd<F: Scalar>(points: ArrayView2<'_, F>, k: usize, w: &[F], seed: u64) -> ClusteringResult<F> {
    let mut centroids = plus_plus_init(points, k, w, seed);
    let (mut assignment, mut inertia) = assign(points, centroids.view(), w);
    let mut history = vec![inertia];

    for _ in 0..MAX_ITER {
        let mut next_assignment = assignment.clone();
        let next_centroids = update(points, centroids.view(), &mut next_assignment, w);
        let (next_assignment, next_inertia) = assign(points, next_centroids.view(), w);
        if next_inertia > inertia {
            break;
        }
        let improvement = inertia - next_inertia;
        let previous = inertia;
        centroids = next_centroids;
        assignment = next_assignment;
        inertia = next_inertia;
        history.push(inertia);
        if previous == F::zero() || improvement <= F::lit(TOLERANCE) * previous {
            break;
        }
    }

    ClusteringResult {
        centroids,
        assignment,
        inertia,
        inertia_history: history,
    }
}

/// Samples an index with probability proportional to `mass`, skipping
/// zero-mass entries. Returns `None` when all mass is zero.
fn sample_proportional<F: Scalar, R: Rng>(mass: &[F], rng: &mut R) -> Option<usize> {
    let total: f64 = mass.iter().map(|m| m.f64()).sum();
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, m) in mass.iter().enumerate() {
        let m = m.f64();
        if m <= 0.0 {
            continue;
        }
        acc += m;
        last = Some(i);
        if acc > target {
            return Some(i);
        }
    }
    last
}

fn plus_plus_init<F: Scalar>(points: ArrayView2<'_, F>, k: usize, w: &[F], seed: u64) -> Array2<F> {
    let n = points.nrows();
    let mut rng = seed::rng(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let first = sample_proportional(w, &mut rng).unwrap_or(0);
    chosen.push(first);
    let mut d2: Vec<F> = (0..n)
        .map(|i| sq_dist(points.row(i).iter().copied(), points.row(first).iter().copied()))
        .collect();
    while chosen.len() < k {
        let mass: Vec<F> = d2.iter().zip(w).map(|(&d, &wi)| d * wi).collect();
        let next = match sample_proportional(&mass, &mut rng) {
            Some(i) => i,
            None => {
                // every remaining point coincides with a center or has no weight
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            let dn = sq_dist(points.row(i).iter().copied(), points.row(next).iter().copied());
            if dn < *d {
                *d = dn;
            }
        }
    }
    points.select(ndarray::Axis(0), &chosen)
}

fn assign<F: Scalar>(points: ArrayView2<'_, F>, centroids: ArrayView2<'_, F>, w: &[F]) -> (Vec<usize>, F) {
    let mut inertia = F::zero();
    let assignment = points
        .rows()
        .into_iter()
        .zip(w)
        .map(|(p, &wi)| {
            let mut best = (F::infinity(), 0);
            for (j, c) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(p.iter().copied(), c.iter().copied());
                if d < best.0 {
                    best = (d, j);
                }
            }
            inertia += wi * best.0;
            best.1
        })
        .collect();
    (assignment, inertia)
}

/// Weighted means of the current assignment. Empty clusters seize the point
/// with the largest weighted squared distance to its own centroid, taken
/// from clusters that keep at least one other member.
fn update<F: Scalar>(
    points: ArrayView2<'_, F>,
    centroids: ArrayView2<'_, F>,
    assignment: &mut [usize],
    w: &[F],
) -> Array2<F> {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    let mut seized = vec![false; points.nrows()];
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut best: Option<(F, usize)> = None;
        for (i, p) in points.rows().into_iter().enumerate() {
            let a = assignment[i];
            if seized[i] || counts[a] < 2 {
                continue;
            }
            let d = w[i] * sq_dist(p.iter().copied(), centroids.row(a).iter().copied());
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        if let Some((_, i)) = best {
            counts[assignment[i]] -= 1;
            assignment[i] = j;
            counts[j] = 1;
            seized[i] = true;
        }
    }

    let d = points.ncols();
    let mut sums = Array2::<F>::zeros((k, d));
    let mut mass = vec![F::zero(); k];
    for (i, p) in points.rows().into_iter().enumerate() {
        let a = assignment[i];
        mass[a] += w[i];
        for (s, &x) in sums.row_mut(a).iter_mut().zip(p.iter()) {
            *s += w[i] * x;
        }
    }
    let mut out = centroids.to_owned();
    for j in 0..k {
        if mass[j] > F::zero() {
            for (o, &s) in out.row_mut(j).iter_mut().zip(sums.row(j).iter()) {
                *o = s / mass[j];
            }
        } else if counts[j] > 0 {
            // only zero-weight members: fall back to their plain mean
            let members: Vec<usize> = (0..points.nrows()).filter(|&i| assignment[i] == j).collect();
            let inv = F::one() / F::lit(members.len() as f64);
            for c in 0..d {
                out[[j, c]] = members.iter().fold(F::zero(), |a, &i| a + points[[i, c]]) * inv;
            }
        }
    }
    out
}

/// For each centroid in order, the position of its nearest point not yet
/// claimed by an earlier centroid. Distance ties go to the lower position.
pub fn nearest_to_centroids<F: Scalar>(points: ArrayView2<'_, F>, centroids: ArrayView2<'_, F>) -> Vec<usize> {
    let mut claimed = vec![false; points.nrows()];
    let mut out = Vec::with_capacity(centroids.nrows());
    for c in centroids.rows() {
        let mut best: Option<(F, usize)> = None;
        for (i, p) in points.rows().into_iter().enumerate() {
            if claimed[i] {
                continue;
            }
            let d = sq_dist(p.iter().copied(), c.iter().copied());
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        if let Some((_, i)) = best {
            claimed[i] = true;
            out.push(i);
        }
    }
    out
}
