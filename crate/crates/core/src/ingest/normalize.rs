use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Sample;

pub const STD_EPSILON: f64 = 1e-8;

/// Per-modality, per-channel statistics fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl ZScoreStats {
    pub fn fit(train: &[Sample]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot fit normalization on empty data".into()))?;
        let names: Vec<String> = first.windows().iter().map(|w| w.modality_id.clone()).collect();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        let mut warnings = Vec::new();
        for m in 0..first.num_modalities() {
            let c = first.windows()[m].channels();
            let mut sum = vec![0.0f64; c];
            let mut count = 0usize;
            for s in train {
                let w = s.windows()[m];
                for (ch, row) in w.values.axis_iter(Axis(0)).enumerate() {
                    sum[ch] += row.iter().map(|&x| f64::from(x)).sum::<f64>();
                }
                count += w.len();
            }
            let mu: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let mut sq = vec![0.0f64; c];
            for s in train {
                let w = s.windows()[m];
                for (ch, row) in w.values.axis_iter(Axis(0)).enumerate() {
                    sq[ch] += row.iter().map(|&x| (f64::from(x) - mu[ch]).powi(2)).sum::<f64>();
                }
            }
            let sd: Vec<f64> = sq
                .iter()
                .enumerate()
                .map(|(ch, v)| {
                    let sd = (v / count as f64).sqrt();
                    if sd < STD_EPSILON {
                        let msg = format!("modality {} channel {ch} has zero variance", names[m]);
                        log::warn!("{msg}");
                        warnings.push(msg);
                    }
                    sd.max(STD_EPSILON)
                })
                .collect();
            mean.push(mu);
            std.push(sd);
        }
        Ok(Self {
            mean,
            std,
            warnings,
        })
    }

    pub fn apply(&self, samples: &[Sample]) -> Vec<Sample> {
        samples
            .iter()
            .map(|s| {
                s.map_values(|m, values| {
                    let mut out: Array2<f32> = values.clone();
                    for (ch, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                        let (mu, sd) = (self.mean[m][ch], self.std[m][ch]);
                        row.mapv_inplace(|x| ((f64::from(x) - mu) / sd) as f32);
                    }
                    out
                })
            })
            .collect()
    }
}

/// Fits statistics on `train` and applies them to `train` and every split in `others`.
pub fn zscore_fit_apply(
    train: &[Sample],
    others: &[&[Sample]],
) -> Result<(Vec<Sample>, Vec<Vec<Sample>>, ZScoreStats)> {
    let stats = ZScoreStats::fit(train)?;
    let train = stats.apply(train);
    let others = others.iter().map(|o| stats.apply(o)).collect();
    Ok((train, others, stats))
}
