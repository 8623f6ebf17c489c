use ndarray::Array3;

use crate::error::{Error, Result};
use crate::ingest::{zscore_fit_apply, SplitPlan, ZScoreStats};
use crate::types::{Sample, SignalBatch};

/// Stacked inputs with one class label per example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: SignalBatch,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
}

impl LabeledSet {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let inputs = SignalBatch::from_samples(samples)?;
        let labels = samples
            .iter()
            .map(|s| {
                s.label()
                    .ok_or_else(|| Error::InvalidArgument("unlabeled window in labeled set".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inputs,
            labels,
            subjects: samples.iter().map(|s| s.subject_id().to_string()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    pub fn modalities(&self) -> &[Array3<f32>] {
        &self.inputs.modalities
    }
}

/// Normalized splits ready for any protocol.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: String,
    pub plan: SplitPlan,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: ZScoreStats,
    pub num_classes: usize,
}

impl Prepared {
    pub fn channels(&self) -> Vec<usize> {
        self.train[0].windows().iter().map(|w| w.channels()).collect()
    }

    pub fn window_len(&self) -> usize {
        self.train[0].len()
    }

    pub fn train_set(&self) -> Result<LabeledSet> {
        LabeledSet::from_samples(&self.train)
    }

    pub fn val_set(&self) -> Result<Option<LabeledSet>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        LabeledSet::from_samples(&self.val).map(Some)
    }

    pub fn test_set(&self) -> Result<LabeledSet> {
        LabeledSet::from_samples(&self.test)
    }

    /// Subject audit over everything that reaches a fitting step.
    pub fn audit(&self, context: &str) -> Result<()> {
        self.plan.audit(context, self.train.iter().chain(&self.val))
    }
}

/// Splits `samples` by `plan`, audits, and z-normalizes with statistics fitted
/// on the training subjects only.
pub fn prepare(dataset: &str, samples: &[Sample], plan: &SplitPlan, num_classes: usize) -> Result<Prepared> {
    plan.validate()?;
    let splits = plan.apply(samples);
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(Error::InvalidArgument("split leaves train or test empty".into()));
    }
    plan.audit("normalization", &splits.train)?;
    let (train, mut others, stats) = zscore_fit_apply(&splits.train, &[&splits.val, &splits.test])?;
    let test = others.pop().expect("two others");
    let val = others.pop().expect("two others");
    let prepared = Prepared {
        dataset: dataset.to_string(),
        plan: plan.clone(),
        train,
        val,
        test,
        stats,
        num_classes,
    };
    prepared.audit("prepare")?;
    Ok(prepared)
}
