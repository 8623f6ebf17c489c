//! Checks shared by the property suites and the acceptance runner.
//!
//! Each check takes a seed, builds a random instance, and returns `Err` with
//! a description on the first violated property.
#![allow(dead_code)]

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use senselearn::selftasks::generators::{BLEND_CLASSES, BLEND_CROSS, BLEND_ORIGINAL};
use senselearn::selftasks::{compute_stats, generate};
use senselearn::transforms::{
    blend_values, circular_shift_values, mask_segment_values, substitute_segment_values,
    transform_values, SubstituteMode, TransformKind,
};
use senselearn::{
    ExampleMeta, PretextBatch, SeedStream, SelfLabeledBatch, SignalBatch, Target, TaskId,
    TaskSpec, TripletBatch,
};

pub mod grad;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_values(rng: &mut ChaCha8Rng, channels: usize, len: usize) -> Array2<f32> {
    Array2::from_shape_fn((channels, len), |_| rng.gen_range(-3.0f32..3.0))
}

/// Random two-modality batch with equal shapes (blend tasks need them).
pub fn random_batch(seed: u64) -> SignalBatch {
    let mut r = rng(seed);
    let n = r.gen_range(1..=6);
    let channels = r.gen_range(2..=4);
    let len = 4 * r.gen_range(8..=20);
    let modalities = (0..2)
        .map(|_| Array3::from_shape_fn((n, channels, len), |_| r.gen_range(-3.0f32..3.0)))
        .collect();
    SignalBatch {
        modalities,
        modality_ids: vec!["acc".into(), "gyro".into()],
    }
}

fn ex(batch: &SignalBatch, m: usize, i: usize) -> ArrayView2<'_, f32> {
    batch.modalities[m].index_axis(Axis(0), i)
}

// ---------------------------------------------------------------- transforms

pub fn check_transforms(seed: u64) -> Check {
    let mut r = rng(seed);
    let channels = r.gen_range(1..=4);
    let len = r.gen_range(4..=64);
    let x = random_values(&mut r, channels, len);
    let op_seed = r.gen::<u64>();

    for kind in TransformKind::applicable(channels) {
        let a = transform_values(kind, x.view(), &mut rng(op_seed)).map_err(|e| e.to_string())?;
        let b = transform_values(kind, x.view(), &mut rng(op_seed)).map_err(|e| e.to_string())?;
        ensure!(a.shape() == x.shape(), "{kind}: shape {:?} -> {:?}", x.shape(), a.shape());
        ensure!(a == b, "{kind}: not deterministic under a fixed seed");
    }
    if channels == 1 {
        ensure!(
            transform_values(TransformKind::Rotation, x.view(), &mut rng(op_seed)).is_err(),
            "rotation on one channel must fail"
        );
    }

    let t = |k| transform_values(k, x.view(), &mut rng(op_seed)).unwrap();
    let neg = t(TransformKind::Negation);
    ensure!(neg == x.mapv(|v| -v), "negation is not elementwise -x");
    let neg2 = transform_values(TransformKind::Negation, neg.view(), &mut rng(0)).unwrap();
    ensure!(neg2 == x, "negation is not an involution");
    let flip = t(TransformKind::Flip);
    let flip2 = transform_values(TransformKind::Flip, flip.view(), &mut rng(0)).unwrap();
    ensure!(flip2 == x, "flip is not an involution");
    ensure!(t(TransformKind::Identity) == x, "identity changed the window");

    let perm = t(TransformKind::Permutation);
    for c in 0..channels {
        let mut a = x.row(c).to_vec();
        let mut b = perm.row(c).to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        ensure!(a == b, "permutation changed the value multiset of channel {c}");
    }

    if channels >= 2 {
        let rot = t(TransformKind::Rotation);
        for time in 0..len {
            let n0: f64 = x.column(time).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            let n1: f64 = rot.column(time).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            ensure!(
                (n0 - n1).abs() <= 1e-5 * n0.max(1.0),
                "rotation changed the norm at t={time}: {n0} vs {n1}"
            );
        }
    }

    let a = r.gen_range(0..3 * len);
    let b = r.gen_range(0..3 * len);
    let once = circular_shift_values(x.view(), a + b);
    let twice = circular_shift_values(circular_shift_values(x.view(), a).view(), b);
    ensure!(once == twice, "circular shift does not compose ({a}+{b})");
    ensure!(circular_shift_values(x.view(), len) == x, "shift by l is not identity");
    for time in 0..len {
        for c in 0..channels {
            ensure!(
                once[[c, time]] == x[[c, (time + 3 * len - (a + b) % len) % len]],
                "circular shift definition violated"
            );
        }
    }

    let y = random_values(&mut r, channels, len);
    let mu: f32 = r.gen_range(0.0..=1.0);
    let ab = blend_values(x.view(), y.view(), mu).unwrap();
    let ba = blend_values(y.view(), x.view(), mu).unwrap();
    for ((p, q), (u, v)) in ab.iter().zip(ba.iter()).zip(x.iter().zip(y.iter())) {
        ensure!(((p + q) - (u + v)).abs() <= 1e-6 * (1.0 + (u + v).abs()), "blend is not linear");
    }
    ensure!(blend_values(x.view(), y.view(), 0.0).unwrap() == x, "blend at 0 is not a");
    ensure!(blend_values(x.view(), y.view(), 1.0).unwrap() == y, "blend at 1 is not b");

    let start = r.gen_range(0..=len);
    let length = r.gen_range(0..=len - start);
    let masked = mask_segment_values(x.view(), start, length).unwrap();
    ensure!(masked.shape() == x.shape(), "mask changed the shape");
    for time in 0..len {
        for c in 0..channels {
            let expect = if (start..start + length).contains(&time) { 0.0 } else { x[[c, time]] };
            ensure!(masked[[c, time]] == expect, "mask wrong at ({c}, {time})");
        }
    }

    let slot_len = r.gen_range(1..=len);
    let slots = len.div_ceil(slot_len);
    let slot = r.gen_range(0..slots);
    let mode = if r.gen_bool(0.5) { SubstituteMode::Swap } else { SubstituteMode::Blend };
    let sub = substitute_segment_values(x.view(), y.view(), slot, mode, mu, slot_len).unwrap();
    let (lo, hi) = (slot * slot_len, ((slot + 1) * slot_len).min(len));
    ensure!(sub.shape() == x.shape(), "substitution changed the shape");
    for time in 0..len {
        for c in 0..channels {
            let expect = if (lo..hi).contains(&time) {
                match mode {
                    SubstituteMode::Swap => y[[c, time]],
                    SubstituteMode::Blend => x[[c, time]] * (1.0 - mu) + y[[c, time]] * mu,
                }
            } else {
                x[[c, time]]
            };
            ensure!(sub[[c, time]] == expect, "substitution wrong at ({c}, {time})");
        }
    }
    ensure!(
        substitute_segment_values(x.view(), y.view(), slots, mode, mu, slot_len).is_err(),
        "slot index past the end must fail"
    );
    Ok(())
}

// ---------------------------------------------------------------- generators

fn classes(t: &Target) -> Result<(&[usize], usize), String> {
    match t {
        Target::Classes { labels, num_classes } => Ok((labels, *num_classes)),
        other => Err(format!("expected class target, got {other:?}")),
    }
}

fn values(t: &Target) -> Result<&Array2<f32>, String> {
    match t {
        Target::Values(v) => Ok(v),
        other => Err(format!("expected value target, got {other:?}")),
    }
}

fn coverage(labels: &[usize], k: usize) -> Check {
    for c in 0..k {
        ensure!(labels.contains(&c), "class {c} of {k} missing from batch");
    }
    Ok(())
}

fn input(out: &SelfLabeledBatch, m: usize, e: usize) -> ArrayView2<'_, f32> {
    out.inputs.modalities[m].index_axis(Axis(0), e)
}

/// Generates `task` on a random batch, checks determinism, shapes, label
/// soundness by replaying the stored metadata, and class coverage.
pub fn check_generator(task: TaskId, seed: u64) -> Check {
    let batch = random_batch(seed);
    let spec = TaskSpec::new(task, batch.window_len()).map_err(|e| e.to_string())?;
    let gseed = SeedStream::new(seed ^ 0x9e37_79b9);
    let a = generate(&spec, &batch, &gseed).map_err(|e| e.to_string())?;
    let b = generate(&spec, &batch, &gseed).map_err(|e| e.to_string())?;
    ensure!(a == b, "{task}: not bit-identical under the same seed");
    match a {
        PretextBatch::Triplet(t) => check_triplet(&batch, &t),
        PretextBatch::Labeled(out) => {
            out.check().map_err(|e| format!("{task}: {e}"))?;
            for m in 0..2 {
                ensure!(
                    out.inputs.modalities[m].shape()[1..] == batch.modalities[m].shape()[1..],
                    "{task}: window shape changed"
                );
            }
            let widths = spec.head_widths(&batch.channels());
            match task {
                TaskId::BlendDetection => replay_blend(&batch, &out),
                TaskId::FusionMagnitude => replay_fusion(&batch, &out),
                TaskId::FeaturePrediction => replay_mask(&spec, &batch, &out),
                TaskId::Transformations => replay_transform(&batch, &out, &gseed),
                TaskId::TemporalShift => replay_shift(&spec, &batch, &out),
                TaskId::ModalityDenoising => replay_denoise(&batch, &out),
                TaskId::OddSegment => replay_odd(&spec, &batch, &out, widths[0]),
                TaskId::Autoencoder => {
                    ensure!(out.inputs == batch, "autoencoder inputs changed");
                    for (m, t) in out.targets.iter().enumerate() {
                        ensure!(*t == Target::Signals(batch.modalities[m].clone()), "autoencoder target != input");
                    }
                    Ok(())
                }
                TaskId::Triplet => unreachable!(),
            }
        }
    }
}

fn replay_blend(batch: &SignalBatch, out: &SelfLabeledBatch) -> Check {
    let (labels, k) = classes(&out.targets[0])?;
    ensure!(k == BLEND_CLASSES, "blend head has {k} classes");
    ensure!(out.len() == 3 * batch.len(), "blend output size {}", out.len());
    coverage(labels, k)?;
    for (e, meta) in out.meta.iter().enumerate() {
        let ExampleMeta::Blend { source, class, partner, mu } = meta else {
            return Err("wrong meta kind".into());
        };
        ensure!(labels[e] == *class, "label/meta disagree");
        for m in 0..2 {
            let expect = match partner {
                None => {
                    ensure!(*class == BLEND_ORIGINAL, "original without partner");
                    ex(batch, m, *source).to_owned()
                }
                Some(j) => {
                    let pm = if *class == BLEND_CROSS { 1 - m } else { m };
                    blend_values(ex(batch, m, *source), ex(batch, pm, *j), *mu).unwrap()
                }
            };
            ensure!(input(out, m, e) == expect, "blend example {e} does not replay");
        }
    }
    Ok(())
}

fn replay_fusion(batch: &SignalBatch, out: &SelfLabeledBatch) -> Check {
    let t = [values(&out.targets[0])?, values(&out.targets[1])?];
    let (mut clean, mut mixed) = (false, false);
    for (e, meta) in out.meta.iter().enumerate() {
        let ExampleMeta::Fusion { source, partner, mu } = meta else {
            return Err("wrong meta kind".into());
        };
        for m in 0..2 {
            ensure!(t[m][[e, 0]] == mu[m], "fusion target != stored mu");
            ensure!((0.0..=1.0).contains(&mu[m]), "mu out of range");
            let expect = match partner {
                None => {
                    ensure!(mu[m] == 0.0, "clean example with nonzero target");
                    clean = true;
                    ex(batch, m, *source).to_owned()
                }
                Some(j) => {
                    mixed = true;
                    blend_values(ex(batch, m, *source), ex(batch, 1 - m, *j), mu[m]).unwrap()
                }
            };
            ensure!(input(out, m, e) == expect, "fusion example {e} does not replay");
        }
    }
    ensure!(clean && mixed, "fusion batch lacks clean or blended examples");
    Ok(())
}

fn replay_mask(spec: &TaskSpec, batch: &SignalBatch, out: &SelfLabeledBatch) -> Check {
    let (lo, hi) = spec.params.mask_bounds;
    for (e, meta) in out.meta.iter().enumerate() {
        let ExampleMeta::Mask { source, segments } = meta else {
            return Err("wrong meta kind".into());
        };
        for (m, &(start, len)) in segments.iter().enumerate() {
            ensure!((lo..=hi).contains(&len), "mask length {len} outside [{lo}, {hi}]");
            let x = ex(batch, m, *source);
            ensure!(
                input(out, m, e) == mask_segment_values(x, start, len).unwrap(),
                "masked input does not replay"
            );
            let stats = compute_stats(x.slice(s![.., start..start + len])).unwrap();
            let row = values(&out.targets[m])?.row(e);
            let flat: Vec<f32> = stats.iter().flat_map(|s| s.to_array()).map(|v| v as f32).collect();
            ensure!(row.to_vec() == flat, "stat targets do not match the unmasked segment");
        }
    }
    Ok(())
}

fn replay_transform(batch: &SignalBatch, out: &SelfLabeledBatch, gseed: &SeedStream) -> Check {
    ensure!(out.len() == 9 * batch.len(), "transformation output size {}", out.len());
    for m in 0..2 {
        let (labels, k) = classes(&out.targets[m])?;
        ensure!(k == TransformKind::COUNT, "transformation head has {k} classes");
        coverage(labels, k)?;
    }
    for (e, meta) in out.meta.iter().enumerate() {
        let ExampleMeta::Transform { source, kinds } = meta else {
            return Err("wrong meta kind".into());
        };
        let variant = e % 9;
        for (m, &kind) in kinds.iter().enumerate() {
            ensure!(classes(&out.targets[m])?.0[e] == kind.index(), "label != kind index");
            let mut r = gseed.derive(*source as u64).derive_path(&[variant as u64, m as u64]).rng();
            let expect = transform_values(kind, ex(batch, m, *source), &mut r).unwrap();
            ensure!(input(out, m, e) == expect, "transformation {kind} does not replay");
            if kind == TransformKind::Identity {
                ensure!(input(out, m, e) == ex(batch, m, *source), "identity input != source");
            }
        }
    }
    Ok(())
}

fn replay_shift(spec: &TaskSpec, batch: &SignalBatch, out: &SelfLabeledBatch) -> Check {
    let l = batch.window_len();
    for (e, meta) in out.meta.iter().enumerate() {
        let ExampleMeta::Shift { source, k, range_index } = meta else {
            return Err("wrong meta kind".into());
        };
        let (lo, hi) = spec.params.shift_ranges[*range_index];
        ensure!((lo..=hi).contains(k), "shift {k} outside its range ({lo}, {hi})");
        for m in 0..2 {
            ensure!(values(&out.targets[m])?[[e, 0]] == *k as f32 / l as f32, "shift target != k/l");
            ensure!(
                input(out, m, e) == circular_shift_values(ex(batch, m, *source), *k),
                "shifted input does not replay"
            );
        }
    }
    Ok(())
}

fn replay_denoise(batch: &SignalBatch, out: &SelfLabeledBatch) -> Check {
    for (e, meta) in out.meta.iter().enumerate() {
        let ExampleMeta::Denoise { source, mu } = meta else {
            return Err("wrong meta kind".into());
        };
        for m in 0..2 {
            let clean = ex(batch, m, *source);
            let Target::Signals(t) = &out.targets[m] else {
                return Err("denoising target is not a signal".into());
            };
            ensure!(t.index_axis(Axis(0), e) == clean, "denoising target != clean source");
            let expect = match mu {
                None => clean.to_owned(),
                Some(mu) => blend_values(clean, ex(batch, 1 - m, *source), *mu).unwrap(),
            };
            ensure!(input(out, m, e) == expect, "denoising input does not replay");
        }
    }
    Ok(())
}

fn replay_odd(spec: &TaskSpec, batch: &SignalBatch, out: &SelfLabeledBatch, k: usize) -> Check {
    let slot_len = spec.params.odd_slot_len;
    ensure!(k == batch.window_len() / slot_len + 1, "odd head width {k}");
    for m in 0..2 {
        let (labels, kk) = classes(&out.targets[m])?;
        ensure!(kk == k, "odd-segment head has {kk} classes");
        coverage(labels, k)?;
    }
    for (e, meta) in out.meta.iter().enumerate() {
        let ExampleMeta::OddSegment { source, slots, partner, blend_mu } = meta else {
            return Err("wrong meta kind".into());
        };
        for m in 0..2 {
            let label = classes(&out.targets[m])?.0[e];
            let x = ex(batch, m, *source);
            match slots[m] {
                None => {
                    ensure!(label == k - 1, "valid input not labeled valid");
                    ensure!(input(out, m, e) == x, "valid input != source");
                }
                Some(slot) => {
                    ensure!(label == slot, "label {label} != corrupted slot {slot}");
                    let src = ex(batch, 1 - m, partner[m].ok_or("missing partner")?);
                    let (mode, mu) = match blend_mu[m] {
                        None => (SubstituteMode::Swap, 1.0),
                        Some(mu) => (SubstituteMode::Blend, mu),
                    };
                    let expect = substitute_segment_values(x, src, slot, mode, mu, slot_len).unwrap();
                    ensure!(input(out, m, e) == expect, "odd segment does not replay");
                    let (lo, hi) = (slot * slot_len, (slot + 1) * slot_len);
                    let got = input(out, m, e);
                    for ((c, t), &b) in x.indexed_iter() {
                        if got[[c, t]] != b {
                            ensure!((lo..hi).contains(&t), "change outside the labeled slot");
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_triplet(batch: &SignalBatch, t: &TripletBatch) -> Check {
    for m in 0..2 {
        ensure!(t.anchors[m] == batch.modalities[m], "anchors are not the originals");
        ensure!(t.negative_modality[m] != m, "negative drawn from the anchor's modality");
        for i in 0..batch.len() {
            let kind = t.positive_kinds[m][i];
            ensure!(kind != TransformKind::Identity, "identity positive");
            ensure!(
                t.positives[m].index_axis(Axis(0), i) != ex(batch, m, i),
                "positive equals its anchor ({kind})"
            );
            let j = t.negative_sources[m][i];
            ensure!(
                t.negatives[m].index_axis(Axis(0), i) == ex(batch, 1 - m, j),
                "negative is not the other modality of its source"
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- oracles

/// Brute-force statistics straight from the textbook definitions, in f64.
pub fn oracle_stats(x: &[f64]) -> [f64; 8] {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 { sorted[k / 2] } else { 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]) };
    let (skew, kurt) = if m2 == 0.0 { (0.0, 0.0) } else { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) };
    let mut peaks = 0.0;
    for i in 1..k.saturating_sub(1) {
        if x[i - 1] < x[i] && x[i] > x[i + 1] {
            peaks += 1.0;
        }
    }
    [mean, m2.sqrt(), sorted[k - 1], sorted[0], median, kurt, skew, peaks]
}

pub fn check_stats_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let channels = r.gen_range(1..=3);
    let len = r.gen_range(1..=120);
    let x = random_values(&mut r, channels, len);
    let got = compute_stats(x.view()).map_err(|e| e.to_string())?;
    for (c, stats) in got.iter().enumerate() {
        let row: Vec<f64> = x.row(c).iter().map(|&v| v as f64).collect();
        let want = oracle_stats(&row);
        for (g, w) in stats.to_array().iter().zip(want) {
            ensure!((g - w).abs() <= 1e-6 * w.abs().max(1.0), "stat {g} vs oracle {w} (len {len})");
        }
    }
    Ok(())
}

/// Weighted F1 and kappa from an explicitly built confusion matrix.
pub fn oracle_metrics(y_true: &[usize], y_pred: &[usize]) -> (f64, f64) {
    let k = y_true.iter().chain(y_pred).max().map_or(0, |m| m + 1);
    let mut cm = vec![vec![0f64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm[t][p] += 1.0;
    }
    let n = y_true.len() as f64;
    let mut f1 = 0.0;
    for c in 0..k {
        let tp = cm[c][c];
        let support: f64 = cm[c].iter().sum();
        let predicted: f64 = (0..k).map(|r| cm[r][c]).sum();
        let denom = support + predicted;
        let f = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        f1 += f * support / n;
    }
    let po = (0..k).map(|c| cm[c][c]).sum::<f64>() / n;
    let pe = (0..k)
        .map(|c| cm[c].iter().sum::<f64>() * (0..k).map(|r| cm[r][c]).sum::<f64>())
        .sum::<f64>()
        / (n * n);
    let kappa = if (1.0 - pe).abs() < 1e-15 { 0.0 } else { (po - pe) / (1.0 - pe) };
    (f1, kappa)
}

pub fn check_metric_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let k = r.gen_range(2..=7);
    let n = r.gen_range(1..=200);
    let y_true: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let y_pred: Vec<usize> = y_true
        .iter()
        .map(|&t| if r.gen_bool(0.6) { t } else { r.gen_range(0..k) })
        .collect();
    let f1 = senselearn::evaluate::weighted_f1(&y_true, &y_pred).map_err(|e| e.to_string())?;
    let kappa = senselearn::evaluate::cohens_kappa(&y_true, &y_pred).map_err(|e| e.to_string())?;
    let (of1, okappa) = oracle_metrics(&y_true, &y_pred);
    ensure!((f1 - of1).abs() <= 1e-9, "weighted f1 {f1} vs oracle {of1}");
    ensure!((kappa - okappa).abs() <= 1e-9, "kappa {kappa} vs oracle {okappa}");
    Ok(())
}

pub const LABELED_TASKS: [TaskId; 9] = [
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
