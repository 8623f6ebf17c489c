//! Self-labeled example generators, one per pretext task.
//!
//! Every generator is a pure function of `(spec, batch, seed)`. Example `i`
//! draws all of its randomness from `seed.derive(i)`, so outputs are
//! reproducible regardless of how the work is scheduled.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::transforms::{
    blend_values, circular_shift_values, mask_segment_values, substitute_segment_values,
    transform_values, SubstituteMode, TransformKind,
};
use crate::types::{
    ExampleMeta, PretextBatch, SelfLabeledBatch, SignalBatch, Target, TaskId, TaskSpec,
    TripletBatch,
};

use super::stats::{stats_matrix, NUM_STATS};

/// Number of blend-detection classes: original, cross-modality blend, same-modality blend.
pub const BLEND_CLASSES: usize = 3;
pub const BLEND_ORIGINAL: usize = 0;
pub const BLEND_CROSS: usize = 1;
pub const BLEND_SAME: usize = 2;

/// Odd-segment blends draw `μ` from this range so the foreign signal dominates.
pub const ODD_BLEND_MU: (f32, f32) = (0.5, 1.0);

/// Dispatches to the generator for `spec.task_id`.
pub fn generate(spec: &TaskSpec, batch: &SignalBatch, seed: &SeedStream) -> Result<PretextBatch> {
    Ok(match spec.task_id {
        TaskId::BlendDetection => PretextBatch::Labeled(gen_blend_detection(batch, seed)?),
        TaskId::FusionMagnitude => PretextBatch::Labeled(gen_fusion_magnitude(batch, seed)?),
        TaskId::FeaturePrediction => {
            PretextBatch::Labeled(gen_feature_prediction(spec, batch, seed)?)
        }
        TaskId::Transformations => {
            PretextBatch::Labeled(gen_transformation_recognition(batch, seed)?)
        }
        TaskId::TemporalShift => PretextBatch::Labeled(gen_temporal_shift(spec, batch, seed)?),
        TaskId::ModalityDenoising => {
            PretextBatch::Labeled(gen_modality_denoising(batch, seed)?)
        }
        TaskId::OddSegment => PretextBatch::Labeled(gen_odd_segment(spec, batch, seed)?),
        TaskId::Triplet => PretextBatch::Triplet(gen_triplet(batch, seed)?),
        TaskId::Autoencoder => PretextBatch::Labeled(gen_autoencoder(batch)?),
    })
}

fn example(batch: &SignalBatch, m: usize, i: usize) -> ArrayView2<'_, f32> {
    batch.modalities[m].index_axis(Axis(0), i)
}

fn require_nonempty(batch: &SignalBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty input batch".into()));
    }
    Ok(())
}

fn require_pair(task: TaskId, batch: &SignalBatch) -> Result<()> {
    require_nonempty(batch)?;
    task.check_modalities(batch.num_modalities())?;
    let shapes: Vec<_> = batch.modalities.iter().map(|m| m.shape()[1..].to_vec()).collect();
    if shapes[0] != shapes[1] {
        return Err(Error::ShapeMismatch(format!(
            "{task} blends across modalities and needs equal window shapes, got {:?} and {:?}",
            shapes[0], shapes[1]
        )));
    }
    Ok(())
}

/// A uniformly drawn example index other than `i` (or `i` itself for a batch of one).
fn partner(rng: &mut ChaCha8Rng, n: usize, i: usize) -> usize {
    if n < 2 {
        return i;
    }
    let j = rng.gen_range(0..n - 1);
    if j >= i {
        j + 1
    } else {
        j
    }
}

/// Accumulates per-modality example rows before stacking them into a batch.
struct Builder {
    rows: Vec<Vec<Array2<f32>>>,
}

impl Builder {
    fn new(modalities: usize) -> Self {
        Self {
            rows: vec![Vec::new(); modalities],
        }
    }

    fn push(&mut self, m: usize, x: Array2<f32>) {
        self.rows[m].push(x);
    }

    fn finish(self, ids: &[String]) -> Result<SignalBatch> {
        let modalities = self
            .rows
            .iter()
            .map(|rows| stack(rows))
            .collect::<Result<Vec<_>>>()?;
        Ok(SignalBatch {
            modalities,
            modality_ids: ids.to_vec(),
        })
    }
}

fn stack(rows: &[Array2<f32>]) -> Result<Array3<f32>> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

fn column(values: Vec<f32>) -> Array2<f32> {
    let n = values.len();
    Array2::from_shape_vec((n, 1), values).expect("column shape")
}

/// Three classes per source example: the original pair, both modalities
/// blended with the other modality of a random example, and both blended
/// with the same modality of a random example. One fused 3-class head.
pub fn gen_blend_detection(batch: &SignalBatch, seed: &SeedStream) -> Result<SelfLabeledBatch> {
    require_pair(TaskId::BlendDetection, batch)?;
    let n = batch.len();
    let mut out = Builder::new(2);
    let mut labels = Vec::with_capacity(3 * n);
    let mut meta = Vec::with_capacity(3 * n);
    for i in 0..n {
        let mut rng = seed.derive(i as u64).rng();
        let (u, v) = (example(batch, 0, i), example(batch, 1, i));
        out.push(0, u.to_owned());
        out.push(1, v.to_owned());
        labels.push(BLEND_ORIGINAL);
        meta.push(ExampleMeta::Blend {
            source: i,
            class: BLEND_ORIGINAL,
            partner: None,
            mu: 0.0,
        });

        for class in [BLEND_CROSS, BLEND_SAME] {
            let j = partner(&mut rng, n, i);
            let mu: f32 = rng.gen_range(0.0..1.0);
            let (pu, pv) = if class == BLEND_CROSS {
                (example(batch, 1, j), example(batch, 0, j))
            } else {
                (example(batch, 0, j), example(batch, 1, j))
            };
            out.push(0, blend_values(u, pu, mu)?);
            out.push(1, blend_values(v, pv, mu)?);
            labels.push(class);
            meta.push(ExampleMeta::Blend {
                source: i,
                class,
                partner: Some(j),
                mu,
            });
        }
    }
    Ok(SelfLabeledBatch {
        task_id: TaskId::BlendDetection,
        inputs: out.finish(&batch.modality_ids)?,
        targets: vec![Target::Classes {
            labels,
            num_classes: BLEND_CLASSES,
        }],
        meta,
    })
}

/// A clean copy (target 0 on both heads) and a copy where each modality is
/// blended with the other modality of a random example under its own `μ`
/// (target `μ` on that modality's head).
pub fn gen_fusion_magnitude(batch: &SignalBatch, seed: &SeedStream) -> Result<SelfLabeledBatch> {
    require_pair(TaskId::FusionMagnitude, batch)?;
    let n = batch.len();
    let mut out = Builder::new(2);
    let mut targets = [Vec::with_capacity(2 * n), Vec::with_capacity(2 * n)];
    let mut meta = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut rng = seed.derive(i as u64).rng();
        for m in 0..2 {
            out.push(m, example(batch, m, i).to_owned());
            targets[m].push(0.0);
        }
        meta.push(ExampleMeta::Fusion {
            source: i,
            partner: None,
            mu: vec![0.0, 0.0],
        });

        let j = partner(&mut rng, n, i);
        let mut mus = Vec::with_capacity(2);
        for m in 0..2 {
            let mu: f32 = rng.gen_range(0.0..1.0);
            out.push(m, blend_values(example(batch, m, i), example(batch, 1 - m, j), mu)?);
            targets[m].push(mu);
            mus.push(mu);
        }
        meta.push(ExampleMeta::Fusion {
            source: i,
            partner: Some(j),
            mu: mus,
        });
    }
    let [t0, t1] = targets;
    Ok(SelfLabeledBatch {
        task_id: TaskId::FusionMagnitude,
        inputs: out.finish(&batch.modality_ids)?,
        targets: vec![Target::Values(column(t0)), Target::Values(column(t1))],
        meta,
    })
}

/// Masks one random segment per modality and targets the segment's eight
/// summary statistics per channel (raw values; the loss standardizes them).
pub fn gen_feature_prediction(
    spec: &TaskSpec,
    batch: &SignalBatch,
    seed: &SeedStream,
) -> Result<SelfLabeledBatch> {
    require_nonempty(batch)?;
    let (n_low, n_high) = spec.params.mask_bounds;
    let l = batch.window_len();
    if n_low > n_high {
        return Err(Error::InvalidArgument(format!(
            "mask bounds n_low={n_low} > n_high={n_high}"
        )));
    }
    if n_low == 0 || n_high > l {
        return Err(Error::InvalidArgument(format!(
            "mask bounds ({n_low}, {n_high}) invalid for window length {l}"
        )));
    }
    let n = batch.len();
    let mm = batch.num_modalities();
    let mut out = Builder::new(mm);
    let mut targets: Vec<Array2<f32>> = batch
        .channels()
        .iter()
        .map(|c| Array2::zeros((n, c * NUM_STATS)))
        .collect();
    let mut meta = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = seed.derive(i as u64).rng();
        let mut segments = Vec::with_capacity(mm);
        for (m, target) in targets.iter_mut().enumerate() {
            let x = example(batch, m, i);
            let len = rng.gen_range(n_low..=n_high);
            let start = rng.gen_range(0..=l - len);
            let stats = stats_matrix(x.slice(s![.., start..start + len]))?;
            for (t, &v) in target.row_mut(i).iter_mut().zip(stats.iter()) {
                *t = v as f32;
            }
            out.push(m, mask_segment_values(x, start, len)?);
            segments.push((start, len));
        }
        meta.push(ExampleMeta::Mask {
            source: i,
            segments,
        });
    }
    Ok(SelfLabeledBatch {
        task_id: TaskId::FeaturePrediction,
        inputs: out.finish(&batch.modality_ids)?,
        targets: targets.into_iter().map(Target::Values).collect(),
        meta,
    })
}

/// Nine variants per source example, one per transformation class. The first
/// modality takes variant `j` as class `j`; further modalities use a random
/// class order so each head sees independent labels and every class.
pub fn gen_transformation_recognition(
    batch: &SignalBatch,
    seed: &SeedStream,
) -> Result<SelfLabeledBatch> {
    require_nonempty(batch)?;
    if let Some(m) = batch.channels().iter().position(|&c| c < 2) {
        return Err(Error::InvalidArgument(format!(
            "transformation recognition needs >= 2 channels per modality (modality {m} has 1)"
        )));
    }
    let n = batch.len();
    let mm = batch.num_modalities();
    let k = TransformKind::COUNT;
    let mut out = Builder::new(mm);
    let mut labels = vec![Vec::with_capacity(k * n); mm];
    let mut meta = Vec::with_capacity(k * n);
    for i in 0..n {
        let ex_seed = seed.derive(i as u64);
        let mut rng = ex_seed.rng();
        let orders: Vec<Vec<usize>> = (0..mm)
            .map(|m| {
                let mut order: Vec<usize> = (0..k).collect();
                if m > 0 {
                    order.shuffle(&mut rng);
                }
                order
            })
            .collect();
        for j in 0..k {
            let mut kinds = Vec::with_capacity(mm);
            for m in 0..mm {
                let kind = TransformKind::ALL[orders[m][j]];
                let mut op_rng = ex_seed.derive_path(&[j as u64, m as u64]).rng();
                out.push(m, transform_values(kind, example(batch, m, i), &mut op_rng)?);
                labels[m].push(kind.index());
                kinds.push(kind);
            }
            meta.push(ExampleMeta::Transform { source: i, kinds });
        }
    }
    Ok(SelfLabeledBatch {
        task_id: TaskId::Transformations,
        inputs: out.finish(&batch.modality_ids)?,
        targets: labels
            .into_iter()
            .map(|labels| Target::Classes {
                labels,
                num_classes: k,
            })
            .collect(),
        meta,
    })
}

/// Range index containing shift `k`, if any.
pub fn shift_range_index(ranges: &[(usize, usize)], k: usize) -> Option<usize> {
    ranges.iter().position(|&(lo, hi)| (lo..=hi).contains(&k))
}

/// Circularly shifts every modality of an example by the same `k`, drawn by
/// picking a range uniformly and then `k` uniformly inside it. Targets are `k/l`.
pub fn gen_temporal_shift(
    spec: &TaskSpec,
    batch: &SignalBatch,
    seed: &SeedStream,
) -> Result<SelfLabeledBatch> {
    require_nonempty(batch)?;
    let l = batch.window_len();
    let ranges = &spec.params.shift_ranges;
    if ranges.iter().any(|&(_, hi)| hi >= l) {
        return Err(Error::InvalidArgument(format!(
            "shift ranges exceed window length {l}"
        )));
    }
    let n = batch.len();
    let mm = batch.num_modalities();
    let mut out = Builder::new(mm);
    let mut target = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = seed.derive(i as u64).rng();
        let range_index = rng.gen_range(0..ranges.len());
        let (lo, hi) = ranges[range_index];
        let k = rng.gen_range(lo..=hi);
        for m in 0..mm {
            out.push(m, circular_shift_values(example(batch, m, i), k));
        }
        target.push(k as f32 / l as f32);
        meta.push(ExampleMeta::Shift {
            source: i,
            k,
            range_index,
        });
    }
    let target = column(target);
    Ok(SelfLabeledBatch {
        task_id: TaskId::TemporalShift,
        inputs: out.finish(&batch.modality_ids)?,
        targets: vec![Target::Values(target); mm],
        meta,
    })
}

/// Clean pairs plus pairs mixed across modalities under a shared `μ`;
/// the decoder reconstructs the clean pair in both cases.
pub fn gen_modality_denoising(batch: &SignalBatch, seed: &SeedStream) -> Result<SelfLabeledBatch> {
    require_pair(TaskId::ModalityDenoising, batch)?;
    let n = batch.len();
    let mut inputs = Builder::new(2);
    let mut clean = Builder::new(2);
    let mut meta = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut rng = seed.derive(i as u64).rng();
        let (u, v) = (example(batch, 0, i), example(batch, 1, i));
        let mu: f32 = rng.gen_range(0.0..1.0);
        for (mix, source_mu) in [(None, None), (Some(mu), Some(mu))] {
            match mix {
                None => {
                    inputs.push(0, u.to_owned());
                    inputs.push(1, v.to_owned());
                }
                Some(mu) => {
                    inputs.push(0, blend_values(u, v, mu)?);
                    inputs.push(1, blend_values(v, u, mu)?);
                }
            }
            clean.push(0, u.to_owned());
            clean.push(1, v.to_owned());
            meta.push(ExampleMeta::Denoise {
                source: i,
                mu: source_mu,
            });
        }
    }
    let clean = clean.finish(&batch.modality_ids)?;
    Ok(SelfLabeledBatch {
        task_id: TaskId::ModalityDenoising,
        inputs: inputs.finish(&batch.modality_ids)?,
        targets: clean.modalities.into_iter().map(Target::Signals).collect(),
        meta,
    })
}

/// Per modality, either leaves the input valid (class `num_slots`) or
/// replaces one slot with the matching slot of a foreign signal, swapped or
/// blended. Foreign signals come from the other modality when there is one.
/// Classes are assigned in balanced, shuffled order so every class occurs
/// whenever the output holds at least `num_slots + 1` examples; the output
/// size is `max(batch, num_slots + 1)`.
pub fn gen_odd_segment(
    spec: &TaskSpec,
    batch: &SignalBatch,
    seed: &SeedStream,
) -> Result<SelfLabeledBatch> {
    require_nonempty(batch)?;
    let mm = batch.num_modalities();
    if mm == 2 {
        require_pair(TaskId::OddSegment, batch)?;
    }
    let l = batch.window_len();
    let slot_len = spec.params.odd_slot_len;
    if slot_len == 0 || l % slot_len != 0 {
        return Err(Error::InvalidArgument(format!(
            "slot length {slot_len} must divide window length {l}"
        )));
    }
    let slots = l / slot_len;
    let k = slots + 1;
    let n = batch.len();
    let total = n.max(k);

    let mut class_rng = seed.derive(u64::MAX).rng();
    let assignments: Vec<Vec<usize>> = (0..mm)
        .map(|_| {
            let mut c: Vec<usize> = (0..total).map(|e| e % k).collect();
            c.shuffle(&mut class_rng);
            c
        })
        .collect();

    let mut out = Builder::new(mm);
    let mut labels = vec![Vec::with_capacity(total); mm];
    let mut meta = Vec::with_capacity(total);
    for e in 0..total {
        let i = e % n;
        let mut rng = seed.derive(e as u64).rng();
        let mut slot_meta = Vec::with_capacity(mm);
        let mut partners = Vec::with_capacity(mm);
        let mut mus = Vec::with_capacity(mm);
        for m in 0..mm {
            let class = assignments[m][e];
            let x = example(batch, m, i);
            if class == slots {
                out.push(m, x.to_owned());
                slot_meta.push(None);
                partners.push(None);
                mus.push(None);
            } else {
                let (src_m, j) = if mm == 2 {
                    (1 - m, rng.gen_range(0..n))
                } else {
                    (m, partner(&mut rng, n, i))
                };
                let (mode, mu) = if rng.gen_bool(0.5) {
                    (SubstituteMode::Swap, None)
                } else {
                    (
                        SubstituteMode::Blend,
                        Some(rng.gen_range(ODD_BLEND_MU.0..ODD_BLEND_MU.1)),
                    )
                };
                out.push(
                    m,
                    substitute_segment_values(
                        x,
                        example(batch, src_m, j),
                        class,
                        mode,
                        mu.unwrap_or(1.0),
                        slot_len,
                    )?,
                );
                slot_meta.push(Some(class));
                partners.push(Some(j));
                mus.push(mu);
            }
            labels[m].push(class);
        }
        meta.push(ExampleMeta::OddSegment {
            source: i,
            slots: slot_meta,
            partner: partners,
            blend_mu: mus,
        });
    }
    Ok(SelfLabeledBatch {
        task_id: TaskId::OddSegment,
        inputs: out.finish(&batch.modality_ids)?,
        targets: labels
            .into_iter()
            .map(|labels| Target::Classes {
                labels,
                num_classes: k,
            })
            .collect(),
        meta,
    })
}

/// Anchors are the original windows of each modality; positives apply a
/// random non-identity transformation to the anchor; negatives are the other
/// modality of a random example. With one modality the negatives fall back to
/// other examples of the same modality.
pub fn gen_triplet(batch: &SignalBatch, seed: &SeedStream) -> Result<TripletBatch> {
    require_nonempty(batch)?;
    let n = batch.len();
    let mm = batch.num_modalities();
    let mut anchors = Vec::with_capacity(mm);
    let mut positives = Vec::with_capacity(mm);
    let mut negatives = Vec::with_capacity(mm);
    let mut negative_modality = Vec::with_capacity(mm);
    let mut positive_kinds = Vec::with_capacity(mm);
    let mut negative_sources = Vec::with_capacity(mm);
    for m in 0..mm {
        let neg_m = if mm == 2 { 1 - m } else { m };
        let kinds = TransformKind::applicable(batch.channels()[m])
            .into_iter()
            .filter(|&k| k != TransformKind::Identity)
            .collect::<Vec<_>>();
        let mut pos = Vec::with_capacity(n);
        let mut neg = Vec::with_capacity(n);
        let mut pk = Vec::with_capacity(n);
        let mut ns = Vec::with_capacity(n);
        for i in 0..n {
            let ex_seed = seed.derive_path(&[m as u64, i as u64]);
            let mut rng = ex_seed.rng();
            let kind = *kinds.choose(&mut rng).expect("non-identity kinds exist");
            let j = if mm == 2 {
                rng.gen_range(0..n)
            } else {
                partner(&mut rng, n, i)
            };
            let mut op_rng = ex_seed.derive(0).rng();
            pos.push(transform_values(kind, example(batch, m, i), &mut op_rng)?);
            neg.push(example(batch, neg_m, j).to_owned());
            pk.push(kind);
            ns.push(j);
        }
        anchors.push(batch.modalities[m].clone());
        positives.push(stack(&pos)?);
        negatives.push(stack(&neg)?);
        negative_modality.push(neg_m);
        positive_kinds.push(pk);
        negative_sources.push(ns);
    }
    Ok(TripletBatch {
        anchors,
        positives,
        negatives,
        negative_modality,
        positive_kinds,
        negative_sources,
    })
}

/// Reconstruction baseline: targets are the inputs.
pub fn gen_autoencoder(batch: &SignalBatch) -> Result<SelfLabeledBatch> {
    require_nonempty(batch)?;
    Ok(SelfLabeledBatch {
        task_id: TaskId::Autoencoder,
        inputs: batch.clone(),
        targets: batch
            .modalities
            .iter()
            .cloned()
            .map(Target::Signals)
            .collect(),
        meta: (0..batch.len())
            .map(|source| ExampleMeta::Reconstruct { source })
            .collect(),
    })
}
