use ndarray::s;

use super::manifest::Recording;
use crate::error::{Error, Result};
use crate::types::{MultimodalSample, Sample, Window};

pub fn stride(window_length: usize, overlap_fraction: f64) -> usize {
    ((window_length as f64 * (1.0 - overlap_fraction)).round() as usize).max(1)
}

/// Most frequent label; ties go to the label at the centre sample when it is
/// among the tied ones, else to the smallest tied label.
pub fn majority_label(labels: &[usize]) -> Option<usize> {
    let max_label = *labels.iter().max()?;
    let mut counts = vec![0usize; max_label + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let best = *counts.iter().max()?;
    let tied: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] == best).collect();
    if tied.len() == 1 {
        return Some(tied[0]);
    }
    let centre = labels[labels.len() / 2];
    Some(if tied.contains(&centre) { centre } else { tied[0] })
}

/// Sliding windows over a recording. A recording shorter than one window
/// yields no windows.
pub fn segment(
    recording: &Recording,
    modality_names: &[String],
    window_length: usize,
    overlap_fraction: f64,
) -> Result<Vec<Sample>> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap_fraction} outside [0, 1)"
        )));
    }
    if window_length == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    if modality_names.len() != recording.modalities.len() || !(1..=2).contains(&modality_names.len()) {
        return Err(Error::ShapeMismatch("modality names do not match recording".into()));
    }
    let len = recording.len();
    if len < window_length {
        return Ok(Vec::new());
    }
    let step = stride(window_length, overlap_fraction);
    let count = (len - window_length) / step + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * step;
        let end = start + window_length;
        let label = majority_label(&recording.labels[start..end]);
        let windows: Vec<Window> = recording
            .modalities
            .iter()
            .zip(modality_names)
            .map(|(m, name)| {
                Window::new(
                    m.slice(s![.., start..end]).to_owned(),
                    name.clone(),
                    recording.subject_id.clone(),
                    label,
                )
            })
            .collect();
        let mut it = windows.into_iter();
        let u = it.next().expect("one modality");
        out.push(match it.next() {
            Some(v) => Sample::Multimodal(MultimodalSample { u, v }),
            None => Sample::Unimodal(u),
        });
    }
    Ok(out)
}
