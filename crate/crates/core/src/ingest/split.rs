use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::types::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    /// Fraction of subjects withheld for testing.
    pub test: f64,
    /// Fraction of the remaining training pool used for validation.
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { test: 0.3, val: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_subjects: BTreeSet<String>,
    pub val_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
    pub fold_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let overlap = self
            .train_subjects
            .intersection(&self.test_subjects)
            .chain(self.val_subjects.intersection(&self.test_subjects))
            .chain(self.train_subjects.intersection(&self.val_subjects))
            .next();
        match overlap {
            Some(s) => Err(Error::Leakage(format!("subject {s} assigned to two splits"))),
            None => Ok(()),
        }
    }

    pub fn all_subjects(&self) -> BTreeSet<String> {
        self.train_subjects
            .iter()
            .chain(&self.val_subjects)
            .chain(&self.test_subjects)
            .cloned()
            .collect()
    }

    pub fn apply(&self, samples: &[Sample]) -> Splits {
        let pick = |set: &BTreeSet<String>| -> Vec<Sample> {
            samples
                .iter()
                .filter(|s| set.contains(s.subject_id()))
                .cloned()
                .collect()
        };
        Splits {
            train: pick(&self.train_subjects),
            val: pick(&self.val_subjects),
            test: pick(&self.test_subjects),
        }
    }

    /// Fails if any sample about to be used for fitting belongs to a test subject.
    pub fn audit<'a>(&self, context: &str, samples: impl IntoIterator<Item = &'a Sample>) -> Result<()> {
        for s in samples {
            if self.test_subjects.contains(s.subject_id()) {
                return Err(Error::Leakage(format!(
                    "{context}: test subject {} reached a training path",
                    s.subject_id()
                )));
            }
        }
        Ok(())
    }
}

pub fn subjects_of(samples: &[Sample]) -> Vec<String> {
    let set: BTreeSet<String> = samples.iter().map(|s| s.subject_id().to_string()).collect();
    set.into_iter().collect()
}

fn shuffled(subjects: &[String], seed: &SeedStream) -> Vec<String> {
    let mut s: Vec<String> = subjects.to_vec();
    s.sort();
    s.dedup();
    s.shuffle(&mut seed.rng());
    s
}

/// Random subject-wise partition: `test` of subjects withheld, then `val` of
/// the remaining pool for validation. Each split gets at least one subject.
pub fn plan_split(subjects: &[String], ratios: SplitRatios, seed: &SeedStream) -> Result<SplitPlan> {
    let s = shuffled(subjects, seed);
    let n = s.len();
    if n < 3 {
        return Err(Error::NotEnoughSubjects { needed: 3, have: n });
    }
    if !(0.0..1.0).contains(&ratios.test) || !(0.0..1.0).contains(&ratios.val) {
        return Err(Error::InvalidArgument("split ratios must lie in [0, 1)".into()));
    }
    let n_test = ((n as f64 * ratios.test).round() as usize).clamp(1, n - 2);
    let pool = n - n_test;
    let n_val = ((pool as f64 * ratios.val).round() as usize).clamp(1, pool - 1);
    let plan = SplitPlan {
        test_subjects: s[..n_test].iter().cloned().collect(),
        val_subjects: s[n_test..n_test + n_val].iter().cloned().collect(),
        train_subjects: s[n_test + n_val..].iter().cloned().collect(),
        fold_index: None,
    };
    plan.validate()?;
    Ok(plan)
}

/// Plans the split and applies it to the samples.
pub fn split_by_subject(
    samples: &[Sample],
    ratios: SplitRatios,
    seed: &SeedStream,
) -> Result<(SplitPlan, Splits)> {
    let plan = plan_split(&subjects_of(samples), ratios, seed)?;
    let splits = plan.apply(samples);
    Ok((plan, splits))
}

/// Subject-disjoint folds. Each subject is tested in exactly one fold; the
/// rest of each fold's subjects are split `1 − val : val` into train/val.
pub fn kfold_plans(subjects: &[String], folds: usize, val: f64, seed: &SeedStream) -> Result<Vec<SplitPlan>> {
    let s = shuffled(subjects, seed);
    let n = s.len();
    if folds < 2 || n < folds {
        return Err(Error::NotEnoughSubjects {
            needed: folds.max(2),
            have: n,
        });
    }
    let mut plans = Vec::with_capacity(folds);
    for f in 0..folds {
        let lo = f * n / folds;
        let hi = (f + 1) * n / folds;
        let test: BTreeSet<String> = s[lo..hi].iter().cloned().collect();
        let pool: Vec<String> = s.iter().filter(|x| !test.contains(*x)).cloned().collect();
        let n_val = if pool.len() >= 2 {
            ((pool.len() as f64 * val).round() as usize).clamp(1, pool.len() - 1)
        } else {
            0
        };
        plans.push(SplitPlan {
            val_subjects: pool[..n_val].iter().cloned().collect(),
            train_subjects: pool[n_val..].iter().cloned().collect(),
            test_subjects: test,
            fold_index: Some(f),
        });
    }
    Ok(plans)
}
