use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{self, Purpose};

/// How train/test replications are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum SplitScheme {
    /// `repetitions` independent stratified holdout splits.
    RepeatedHoldout {
        repetitions: usize,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    /// Five replications of stratified 2-fold cross-validation; each
    /// replication yields two folds with train and test swapped.
    FiveByTwoCv,
}

fn default_test_fraction() -> f64 {
    0.5
}

impl SplitScheme {
    pub fn n_folds(&self) -> usize {
        match self {
            SplitScheme::RepeatedHoldout { repetitions, .. } => *repetitions,
            SplitScheme::FiveByTwoCv => 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitScheme::RepeatedHoldout {
                repetitions,
                test_fraction,
            } => {
                if repetitions == 0 {
                    return Err(Error::Config("repeated-holdout needs repetitions >= 1".into()));
                }
                if !(test_fraction > 0.0 && test_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "test_fraction must be in (0, 1), got {test_fraction}"
                    )));
                }
                Ok(())
            }
            SplitScheme::FiveByTwoCv => Ok(()),
        }
    }
}

/// Sorted train and test index sets of one replication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub folds: Vec<Fold>,
    pub seed: u64,
}

/// Stratified replication splits, a pure function of the labels, scheme and seed.
pub fn make_splits<F: Scalar>(
    dataset: &Dataset<F>,
    scheme: SplitScheme,
    seed: u64,
) -> Result<SplitPlan> {
    scheme.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
    }

    let folds = match scheme {
        SplitScheme::FiveByTwoCv => {
            let mut folds = Vec::with_capacity(10);
            for rep in 0..5u64 {
                let mut rng = seed::rng(seed::derive(seed, rep, 0, Purpose::Split));
                let mut halves = [Vec::new(), Vec::new()];
                // odd-sized classes hand their extra sample to alternating halves
                let mut extra_to = 0;
                for members in &by_class {
                    let mut m = members.clone();
                    m.shuffle(&mut rng);
                    let half = m.len() / 2;
                    let cut = if m.len() % 2 == 1 {
                        let c = half + usize::from(extra_to == 0);
                        extra_to ^= 1;
                        c
                    } else {
                        half
                    };
                    halves[0].extend_from_slice(&m[..cut]);
                    halves[1].extend_from_slice(&m[cut..]);
                }
                halves[0].sort_unstable();
                halves[1].sort_unstable();
                folds.push(Fold {
                    train: halves[0].clone(),
                    test: halves[1].clone(),
                });
                folds.push(Fold {
                    train: halves[1].clone(),
                    test: halves[0].clone(),
                });
            }
            folds
        }
        SplitScheme::RepeatedHoldout {
            repetitions,
            test_fraction,
        } => (0..repetitions as u64)
            .map(|rep| {
                let mut rng = seed::rng(seed::derive(seed, rep, 0, Purpose::Split));
                let mut train = Vec::new();
                let mut test = Vec::new();
                for members in by_class.iter().filter(|m| !m.is_empty()) {
                    let mut m = members.clone();
                    m.shuffle(&mut rng);
                    let n_test = ((m.len() as f64 * test_fraction).round() as usize)
                        .clamp(1, m.len() - 1);
                    test.extend_from_slice(&m[..n_test]);
                    train.extend_from_slice(&m[n_test..]);
                }
                train.sort_unstable();
                test.sort_unstable();
                Fold { train, test }
            })
            .collect(),
    };

    Ok(SplitPlan {
        scheme,
        folds,
        seed,
    })
}
