//! Domain types shared across the crate.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One fixed-length multichannel signal segment, stored channels-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `[channels × length]`
    pub values: Array2<f32>,
    pub modality_id: String,
    pub subject_id: String,
    pub label: Option<usize>,
}

impl Window {
    pub fn new(
        values: Array2<f32>,
        modality_id: impl Into<String>,
        subject_id: impl Into<String>,
        label: Option<usize>,
    ) -> Self {
        Self {
            values,
            modality_id: modality_id.into(),
            subject_id: subject_id.into(),
            label,
        }
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy of this window carrying different values.
    pub fn with_values(&self, values: Array2<f32>) -> Self {
        Self {
            values,
            modality_id: self.modality_id.clone(),
            subject_id: self.subject_id.clone(),
            label: self.label,
        }
    }

    pub fn validate(&self, num_classes: Option<usize>) -> Result<(), Violation> {
        if self.values.iter().any(|x| !x.is_finite()) {
            return Err(Violation::NonFinite);
        }
        if self.len() == 0 || self.channels() == 0 {
            return Err(Violation::EmptyWindow);
        }
        if let (Some(label), Some(k)) = (self.label, num_classes) {
            if label >= k {
                return Err(Violation::LabelOutOfRange { label, num_classes: k });
            }
        }
        Ok(())
    }
}

/// Time-aligned pair of windows from two modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub u: Window,
    pub v: Window,
}

/// An invariant breach reported by [`validate_sample`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonFinite,
    EmptyWindow,
    LabelOutOfRange { label: usize, num_classes: usize },
    LengthMismatch { u: usize, v: usize },
    SameModality(String),
    SubjectMismatch { u: String, v: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite => write!(f, "all values finite"),
            Violation::EmptyWindow => write!(f, "length >= 1, channels >= 1"),
            Violation::LabelOutOfRange { label, num_classes } => {
                write!(f, "label in [0, num_classes): {label} >= {num_classes}")
            }
            Violation::LengthMismatch { u, v } => write!(f, "u.length == v.length ({u} vs {v})"),
            Violation::SameModality(m) => write!(f, "u.modality_id != v.modality_id ({m})"),
            Violation::SubjectMismatch { u, v } => {
                write!(f, "u.subject_id == v.subject_id ({u} vs {v})")
            }
        }
    }
}

/// Checks window invariants (u then v) followed by the pair invariants, in
/// that order, and reports the first breach.
pub fn validate_sample(sample: &MultimodalSample) -> Result<(), Violation> {
    sample.u.validate(None)?;
    sample.v.validate(None)?;
    if sample.u.len() != sample.v.len() {
        return Err(Violation::LengthMismatch {
            u: sample.u.len(),
            v: sample.v.len(),
        });
    }
    if sample.u.modality_id == sample.v.modality_id {
        return Err(Violation::SameModality(sample.u.modality_id.clone()));
    }
    if sample.u.subject_id != sample.v.subject_id {
        return Err(Violation::SubjectMismatch {
            u: sample.u.subject_id.clone(),
            v: sample.v.subject_id.clone(),
        });
    }
    Ok(())
}

/// A segmented example, unimodal or a modality pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Unimodal(Window),
    Multimodal(MultimodalSample),
}

impl Sample {
    pub fn windows(&self) -> Vec<&Window> {
        match self {
            Sample::Unimodal(w) => vec![w],
            Sample::Multimodal(s) => vec![&s.u, &s.v],
        }
    }

    pub fn primary(&self) -> &Window {
        match self {
            Sample::Unimodal(w) => w,
            Sample::Multimodal(s) => &s.u,
        }
    }

    pub fn subject_id(&self) -> &str {
        &self.primary().subject_id
    }

    pub fn label(&self) -> Option<usize> {
        self.primary().label
    }

    pub fn num_modalities(&self) -> usize {
        match self {
            Sample::Unimodal(_) => 1,
            Sample::Multimodal(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        self.primary().len()
    }

    pub fn is_empty(&self) -> bool {
        self.primary().is_empty()
    }

    pub fn validate(&self, num_classes: Option<usize>) -> Result<(), Violation> {
        match self {
            Sample::Unimodal(w) => w.validate(num_classes),
            Sample::Multimodal(s) => {
                validate_sample(s)?;
                s.u.validate(num_classes)
            }
        }
    }

    /// Applies `f` to every window's values.
    pub fn map_values(&self, mut f: impl FnMut(usize, &Array2<f32>) -> Array2<f32>) -> Sample {
        match self {
            Sample::Unimodal(w) => Sample::Unimodal(w.with_values(f(0, &w.values))),
            Sample::Multimodal(s) => Sample::Multimodal(MultimodalSample {
                u: s.u.with_values(f(0, &s.u.values)),
                v: s.v.with_values(f(1, &s.v.values)),
            }),
        }
    }
}

/// Per-modality stacked signals, `[batch × channels × length]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    pub modalities: Vec<Array3<f32>>,
    pub modality_ids: Vec<String>,
}

impl SignalBatch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Self> {
        let samples: Vec<&Sample> = samples.into_iter().collect();
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty sample batch".into()))?;
        let num_modalities = first.num_modalities();
        let modality_ids: Vec<String> = first
            .windows()
            .iter()
            .map(|w| w.modality_id.clone())
            .collect();
        let mut modalities = Vec::with_capacity(num_modalities);
        for m in 0..num_modalities {
            let views = samples
                .iter()
                .map(|s| {
                    let ws = s.windows();
                    if ws.len() != num_modalities {
                        return Err(Error::ShapeMismatch(
                            "mixed unimodal and multimodal samples".into(),
                        ));
                    }
                    Ok(ws[m].values.view())
                })
                .collect::<Result<Vec<_>>>()?;
            let stacked = ndarray::stack(Axis(0), &views)
                .map_err(|e| Error::ShapeMismatch(format!("modality {m}: {e}")))?;
            modalities.push(stacked);
        }
        Ok(Self {
            modalities,
            modality_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.modalities.first().map_or(0, |m| m.len_of(Axis(0)))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn window_len(&self) -> usize {
        self.modalities.first().map_or(0, |m| m.len_of(Axis(2)))
    }

    pub fn channels(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.len_of(Axis(1))).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            modalities: self
                .modalities
                .iter()
                .map(|m| m.select(Axis(0), indices))
                .collect(),
            modality_ids: self.modality_ids.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    BlendDetection,
    FusionMagnitude,
    FeaturePrediction,
    Transformations,
    TemporalShift,
    ModalityDenoising,
    OddSegment,
    Triplet,
    Autoencoder,
}

impl TaskId {
    pub const ALL: [TaskId; 9] = [
        TaskId::BlendDetection,
        TaskId::FusionMagnitude,
        TaskId::FeaturePrediction,
        TaskId::Transformations,
        TaskId::TemporalShift,
        TaskId::ModalityDenoising,
        TaskId::OddSegment,
        TaskId::Triplet,
        TaskId::Autoencoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::BlendDetection => "blend_detection",
            TaskId::FusionMagnitude => "fusion_magnitude",
            TaskId::FeaturePrediction => "feature_prediction",
            TaskId::Transformations => "transformations",
            TaskId::TemporalShift => "temporal_shift",
            TaskId::ModalityDenoising => "modality_denoising",
            TaskId::OddSegment => "odd_segment",
            TaskId::Triplet => "triplet",
            TaskId::Autoencoder => "autoencoder",
        }
    }

    /// Tasks whose construction mixes the two modalities.
    pub fn requires_two_modalities(self) -> bool {
        matches!(
            self,
            TaskId::BlendDetection | TaskId::FusionMagnitude | TaskId::ModalityDenoising
        )
    }

    pub fn head_layout(self) -> HeadLayout {
        match self {
            TaskId::BlendDetection => HeadLayout::FusedSingleHead,
            TaskId::ModalityDenoising | TaskId::Autoencoder => HeadLayout::Decoder,
            TaskId::Triplet => HeadLayout::Embedding,
            _ => HeadLayout::PerModalityHeads,
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            TaskId::BlendDetection | TaskId::Transformations | TaskId::OddSegment => LossKind::Nll,
            TaskId::FusionMagnitude => LossKind::Bce,
            TaskId::FeaturePrediction => LossKind::Huber,
            TaskId::TemporalShift | TaskId::ModalityDenoising | TaskId::Autoencoder => LossKind::Mse,
            TaskId::Triplet => LossKind::Triplet,
        }
    }

    pub fn check_modalities(self, modalities: usize) -> Result<()> {
        if modalities == 0 || modalities > 2 || (self.requires_two_modalities() && modalities != 2)
        {
            return Err(Error::TaskNotApplicable {
                task: self,
                modalities,
            });
        }
        Ok(())
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    FusedSingleHead,
    PerModalityHeads,
    Decoder,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nll,
    Bce,
    Huber,
    Mse,
    Triplet,
}

/// Generation constants for the pretext tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub window_len: usize,
    /// Masked segment length bounds `(n_low, n_high)`, inclusive.
    pub mask_bounds: (usize, usize),
    pub huber_delta: f64,
    pub triplet_margin: f64,
    /// Inclusive temporal-shift ranges.
    pub shift_ranges: Vec<(usize, usize)>,
    /// Odd-segment slot length.
    pub odd_slot_len: usize,
}

/// Temporal-shift ranges for 400-sample activity windows.
pub const ACTIVITY_SHIFT_RANGES: [(usize, usize); 7] = [
    (0, 5),
    (6, 10),
    (11, 20),
    (21, 50),
    (51, 100),
    (101, 200),
    (201, 300),
];

impl TaskParams {
    pub fn for_window(window_len: usize) -> Result<Self> {
        if window_len < 4 {
            return Err(Error::InvalidArgument(format!(
                "window length {window_len} too short for pretext generation"
            )));
        }
        let l = window_len as f64;
        let n_low = ((0.1 * l).round() as usize).max(1);
        let n_high = ((0.25 * l).round() as usize).max(n_low);
        let shift_ranges = if window_len >= 400 {
            ACTIVITY_SHIFT_RANGES.to_vec()
        } else {
            let scale = l / 400.0;
            ACTIVITY_SHIFT_RANGES
                .iter()
                .map(|&(lo, hi)| {
                    let lo = (lo as f64 * scale).round() as usize;
                    let hi = ((hi as f64 * scale).round() as usize).max(lo);
                    (lo, hi.min(window_len - 1))
                })
                .collect()
        };
        Ok(Self {
            window_len,
            mask_bounds: (n_low, n_high),
            huber_delta: 1.0,
            triplet_margin: 1.0,
            shift_ranges,
            odd_slot_len: window_len / 4,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mask_bounds;
        if lo == 0 || lo > hi || hi > self.window_len {
            return Err(Error::InvalidArgument(format!(
                "mask bounds ({lo}, {hi}) invalid for window length {}",
                self.window_len
            )));
        }
        if self.huber_delta <= 0.0 {
            return Err(Error::InvalidArgument("huber delta must be positive".into()));
        }
        if self.triplet_margin < 0.0 {
            return Err(Error::InvalidArgument("triplet margin must be non-negative".into()));
        }
        if self.odd_slot_len == 0 || self.window_len % self.odd_slot_len != 0 {
            return Err(Error::InvalidArgument(format!(
                "odd-segment slot length {} must divide window length {}",
                self.odd_slot_len, self.window_len
            )));
        }
        if self.shift_ranges.is_empty()
            || self.shift_ranges.iter().any(|&(lo, hi)| lo > hi || hi >= self.window_len)
        {
            return Err(Error::InvalidArgument("shift ranges must lie below window length".into()));
        }
        Ok(())
    }

    pub fn odd_slots(&self) -> usize {
        self.window_len / self.odd_slot_len
    }
}

/// One pretext task: identity, head layout, loss and generation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub head_layout: HeadLayout,
    pub loss_kind: LossKind,
    pub params: TaskParams,
}

impl TaskSpec {
    pub fn new(task_id: TaskId, window_len: usize) -> Result<Self> {
        let params = TaskParams::for_window(window_len)?;
        Self::with_params(task_id, params)
    }

    pub fn with_params(task_id: TaskId, params: TaskParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            task_id,
            head_layout: task_id.head_layout(),
            loss_kind: task_id.loss_kind(),
            params,
        })
    }

    /// Output widths of the classification / regression heads, one per head.
    /// `channels` lists the channel count of each input modality.
    pub fn head_widths(&self, channels: &[usize]) -> Vec<usize> {
        let m = channels.len();
        match self.task_id {
            TaskId::BlendDetection => vec![3],
            TaskId::FusionMagnitude | TaskId::TemporalShift => vec![1; m],
            TaskId::FeaturePrediction => channels.iter().map(|c| 8 * c).collect(),
            TaskId::Transformations => vec![crate::transforms::TransformKind::COUNT; m],
            TaskId::OddSegment => vec![self.params.odd_slots() + 1; m],
            TaskId::ModalityDenoising | TaskId::Autoencoder | TaskId::Triplet => Vec::new(),
        }
    }
}

/// Supervision for one output head.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Classes { labels: Vec<usize>, num_classes: usize },
    /// `[batch × width]`
    Values(Array2<f32>),
    /// `[batch × channels × length]`
    Signals(Array3<f32>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Classes { labels, .. } => labels.len(),
            Target::Values(v) => v.nrows(),
            Target::Signals(s) => s.len_of(Axis(0)),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How one self-labeled example was produced. Enough to replay the labeling.
#[derive(Debug, Clone, PartialEq)]
pub enum ExampleMeta {
    Blend {
        source: usize,
        class: usize,
        partner: Option<usize>,
        mu: f32,
    },
    Fusion {
        source: usize,
        partner: Option<usize>,
        mu: Vec<f32>,
    },
    Mask {
        source: usize,
        /// `(start, length)` per modality
        segments: Vec<(usize, usize)>,
    },
    Transform {
        source: usize,
        kinds: Vec<crate::transforms::TransformKind>,
    },
    Shift {
        source: usize,
        k: usize,
        range_index: usize,
    },
    Denoise {
        source: usize,
        mu: Option<f32>,
    },
    OddSegment {
        source: usize,
        /// per modality: corrupted slot, or `None` for a valid input
        slots: Vec<Option<usize>>,
        partner: Vec<Option<usize>>,
        blend_mu: Vec<Option<f32>>,
    },
    Reconstruct {
        source: usize,
    },
}

/// Generator output: per-modality inputs plus per-head self-derived targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfLabeledBatch {
    pub task_id: TaskId,
    pub inputs: SignalBatch,
    pub targets: Vec<Target>,
    pub meta: Vec<ExampleMeta>,
}

impl SelfLabeledBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        for t in &self.targets {
            if t.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "target batch {} != input batch {n}",
                    t.len()
                )));
            }
            match t {
                Target::Classes {
                    labels,
                    num_classes,
                } => {
                    if labels.iter().any(|&c| c >= *num_classes) {
                        return Err(Error::ShapeMismatch("class target out of range".into()));
                    }
                }
                Target::Values(v) => {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::ShapeMismatch("non-finite regression target".into()));
                    }
                }
                Target::Signals(s) => {
                    if s.iter().any(|x| !x.is_finite()) {
                        return Err(Error::ShapeMismatch("non-finite signal target".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Anchor/positive/negative inputs for the metric-learning task. Index `m`
/// holds triplets anchored on modality `m`; the negatives of those triplets
/// come from `negative_modality[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Vec<Array3<f32>>,
    pub positives: Vec<Array3<f32>>,
    pub negatives: Vec<Array3<f32>>,
    pub negative_modality: Vec<usize>,
    pub positive_kinds: Vec<Vec<crate::transforms::TransformKind>>,
    pub negative_sources: Vec<Vec<usize>>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchors.first().map_or(0, |a| a.len_of(Axis(0)))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PretextBatch {
    Labeled(SelfLabeledBatch),
    Triplet(TripletBatch),
}

impl PretextBatch {
    pub fn len(&self) -> usize {
        match self {
            PretextBatch::Labeled(b) => b.len(),
            PretextBatch::Triplet(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
