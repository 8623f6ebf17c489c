//! Summary statistics of a masked segment.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of statistics per channel.
pub const NUM_STATS: usize = 8;

/// The eight per-channel summary statistics predicted by the masked-window task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatVector {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
    pub median: f64,
    pub kurtosis: f64,
    pub skewness: f64,
    pub num_peaks: f64,
}

impl StatVector {
    pub fn to_array(&self) -> [f64; NUM_STATS] {
        [
            self.mean,
            self.std,
            self.max,
            self.min,
            self.median,
            self.kurtosis,
            self.skewness,
            self.num_peaks,
        ]
    }
}

/// Population moments, midpoint median, Fisher skewness and excess kurtosis
/// (both zero for a constant series), and strict interior local maxima.
pub fn channel_stats(x: ArrayView1<f32>) -> Result<StatVector> {
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidArgument("statistics of an empty segment".into()));
    }
    let xs: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in &xs {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let (skewness, kurtosis) = if m2 > 1e-12 * (1.0 + mean * mean) {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let num_peaks = xs
        .windows(3)
        .filter(|w| w[0] < w[1] && w[1] > w[2])
        .count() as f64;
    Ok(StatVector {
        mean,
        std: m2.sqrt(),
        max: sorted[n - 1],
        min: sorted[0],
        median,
        kurtosis,
        skewness,
        num_peaks,
    })
}

/// Statistics for each channel of a `[channels × s_l]` segment.
pub fn compute_stats(segment: ArrayView2<f32>) -> Result<Vec<StatVector>> {
    if segment.ncols() == 0 || segment.nrows() == 0 {
        return Err(Error::InvalidArgument("statistics of an empty segment".into()));
    }
    segment.rows().into_iter().map(channel_stats).collect()
}

/// Flattened `[channels × 8]` statistics, channel-major.
pub fn stats_matrix(segment: ArrayView2<f32>) -> Result<Array2<f64>> {
    let stats = compute_stats(segment)?;
    let mut out = Array2::zeros((stats.len(), NUM_STATS));
    for (mut row, s) in out.rows_mut().into_iter().zip(&stats) {
        for (o, v) in row.iter_mut().zip(s.to_array()) {
            *o = v;
        }
    }
    Ok(out)
}
