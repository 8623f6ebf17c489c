//! Loading, windowing, subject splits, normalization and synthetic data.

pub mod manifest;
pub mod normalize;
pub mod segment;
pub mod split;
pub mod synth;

pub use manifest::{
    load_dataset, read_labels, read_signal_csv, Dataset, DatasetManifest, ModalitySpec,
    Recording, RecordingEntry, DEFAULT_OVERLAP, DEFAULT_WINDOW_LENGTH,
};
pub use normalize::{zscore_fit_apply, ZScoreStats, STD_EPSILON};
pub use segment::{majority_label, segment, stride};
pub use split::{kfold_plans, plan_split, split_by_subject, subjects_of, SplitPlan, SplitRatios, Splits};
pub use synth::{synth_generate, SynthConfig, SynthVariant, SYNTH_CHANNELS};

use crate::error::Result;
use crate::types::Sample;

/// Segments every recording with the manifest's window settings.
pub fn segment_dataset(dataset: &Dataset) -> Result<Vec<Sample>> {
    let names: Vec<String> = dataset.manifest.modalities.iter().map(|m| m.name.clone()).collect();
    let mut out = Vec::new();
    for r in &dataset.recordings {
        out.extend(segment(
            r,
            &names,
            dataset.manifest.window_length,
            dataset.manifest.overlap,
        )?);
    }
    Ok(out)
}
