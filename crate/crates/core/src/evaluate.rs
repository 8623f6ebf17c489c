//! Classification metrics and run aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_labels(y_true: &[usize], y_pred: &[usize]) -> Result<usize> {
    if y_true.is_empty() {
        return Err(Error::InvalidArgument("empty label vector".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    Ok(y_true.iter().chain(y_pred).max().copied().unwrap_or(0) + 1)
}

/// `counts[t][p]` over the union of observed classes.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize]) -> Result<Vec<Vec<u64>>> {
    let k = check_labels(y_true, y_pred)?;
    let mut m = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-class F1 weighted by true-class support. A class with 0/0 F1 scores 0.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let m = confusion_matrix(y_true, y_pred)?;
    let k = m.len();
    let n = y_true.len() as f64;
    let mut total = 0.0;
    for c in 0..k {
        let tp = m[c][c] as f64;
        let support: u64 = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted: u64 = m.iter().map(|row| row[c]).sum();
        let denom = support as f64 + predicted as f64;
        let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        total += support as f64 * f1;
    }
    Ok(total / n)
}

/// `(p_o − p_e) / (1 − p_e)`; 0 when `p_e = 1`.
pub fn cohens_kappa(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let m = confusion_matrix(y_true, y_pred)?;
    let n = y_true.len() as f64;
    let k = m.len();
    let p_o = (0..k).map(|c| m[c][c] as f64).sum::<f64>() / n;
    let p_e = (0..k)
        .map(|c| {
            let row: u64 = m[c].iter().sum();
            let col: u64 = m.iter().map(|r| r[c]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum::<f64>();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_labels(y_true, y_pred)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Mean and sample standard deviation (n − 1 denominator, 0 for one value).
pub fn aggregate_runs(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no runs to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let (mean, std) = aggregate_runs(&values)?;
        Ok(Self { values, mean, std })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub task: Option<String>,
    pub dataset: String,
    pub source_dataset: Option<String>,
    pub seed: u64,
    pub checkpoint_hash: Option<String>,
    #[serde(default)]
    pub train_subjects: Vec<String>,
    #[serde(default)]
    pub test_subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub f1_weighted: MetricSummary,
    pub kappa: MetricSummary,
    pub provenance: ReportProvenance,
    /// Protocol-specific extras, e.g. the scratch arm of a low-data run.
    #[serde(default)]
    pub extra: BTreeMap<String, MetricSummary>,
}

impl EvalReport {
    pub fn new(
        protocol: &str,
        f1: Vec<f64>,
        kappa: Vec<f64>,
        provenance: ReportProvenance,
    ) -> Result<Self> {
        if f1.len() != kappa.len() {
            return Err(Error::ShapeMismatch("f1 and kappa run counts differ".into()));
        }
        let report = Self {
            protocol: protocol.to_string(),
            f1_weighted: MetricSummary::from_values(f1)?,
            kappa: MetricSummary::from_values(kappa)?,
            provenance,
            extra: BTreeMap::new(),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn runs(&self) -> usize {
        self.f1_weighted.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok_f1 = self.f1_weighted.values.iter().all(|v| (0.0..=1.0).contains(v));
        let ok_k = self.kappa.values.iter().all(|v| (-1.0..=1.0 + 1e-12).contains(v));
        if !ok_f1 || !ok_k || self.f1_weighted.std < 0.0 || self.kappa.std < 0.0 {
            return Err(Error::InvalidArgument("report metrics out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub pass: bool,
    pub delta: f64,
}

/// `|mean − reference| ≤ tolerance` on the weighted F1 mean.
pub fn compare_to_reference(report: &EvalReport, reference: f64, tolerance: f64) -> Result<Comparison> {
    compare_mean(report.f1_weighted.mean, reference, tolerance)
}

pub fn compare_mean(mean: f64, reference: f64, tolerance: f64) -> Result<Comparison> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tolerance}")));
    }
    let delta = (mean - reference).abs();
    Ok(Comparison {
        pass: delta <= tolerance,
        delta,
    })
}
