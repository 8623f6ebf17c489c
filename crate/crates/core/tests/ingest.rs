use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use senselearn::ingest::{
    kfold_plans, load_dataset, plan_split, segment, segment_dataset, stride, synth_generate, zscore_fit_apply,
    DatasetManifest, ModalitySpec, Recording, RecordingEntry, SplitRatios, SynthConfig, SynthVariant, ZScoreStats,
    SYNTH_CHANNELS,
};
use senselearn::{Error, Sample, SeedStream, Window};

fn small_synth() -> SynthConfig {
    SynthConfig {
        length_per_class: 512,
        ..SynthConfig::default()
    }
}

/// Two-subject, two-modality dataset written by hand.
fn handmade(dir: &Path) -> PathBuf {
    let manifest = DatasetManifest {
        name: "hand".into(),
        sampling_rate: 10.0,
        modalities: vec![
            ModalitySpec {
                name: "a".into(),
                channel_count: 2,
            },
            ModalitySpec {
                name: "b".into(),
                channel_count: 1,
            },
        ],
        recordings: ["p1", "p2"]
            .iter()
            .map(|s| RecordingEntry {
                subject_id: s.to_string(),
                signals: vec![format!("{s}_a.csv").into(), format!("{s}_b.csv").into()],
                labels: format!("{s}_y.csv").into(),
            })
            .collect(),
        class_names: vec!["sit".into(), "walk".into()],
        window_length: 4,
        overlap: 0.5,
    };
    for s in ["p1", "p2"] {
        let a: String = (0..10).map(|t| format!("{t},{}\n", -t)).collect();
        let b: String = (0..10).map(|t| format!("{}\n", t * 10)).collect();
        let y: String = (0..10).map(|t| if t < 5 { "sit\n" } else { "1\n" }).collect();
        fs::write(dir.join(format!("{s}_a.csv")), a).unwrap();
        fs::write(dir.join(format!("{s}_b.csv")), b).unwrap();
        fs::write(dir.join(format!("{s}_y.csv")), y).unwrap();
    }
    let path = dir.join("manifest.json");
    manifest.save(&path).unwrap();
    path
}

#[test]
fn handmade_dataset_loads_and_segments() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_dataset(&handmade(dir.path())).unwrap();
    assert_eq!(ds.subjects(), vec!["p1", "p2"]);
    let r = &ds.recordings[0];
    assert_eq!(r.modalities[0].shape(), &[2, 10]);
    assert_eq!(r.modalities[1].shape(), &[1, 10]);
    assert_eq!(r.modalities[0][[1, 3]], -3.0);
    assert_eq!(r.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);

    let samples = segment_dataset(&ds).unwrap();
    // stride 2 over 10 samples with window 4: starts 0, 2, 4, 6
    assert_eq!(samples.len(), 8);
    let labels: Vec<Option<usize>> = samples[..4].iter().map(Sample::label).collect();
    // window 4..8 holds one `sit` and three `walk`
    assert_eq!(labels, vec![Some(0), Some(0), Some(1), Some(1)]);
    match &samples[1] {
        Sample::Multimodal(m) => {
            assert_eq!(m.u.values.row(0).to_vec(), vec![2.0, 3.0, 4.0, 5.0]);
            assert_eq!(m.v.values.row(0).to_vec(), vec![20.0, 30.0, 40.0, 50.0]);
            assert_eq!(m.u.subject_id, "p1");
        }
        other => panic!("expected two modalities, got {other:?}"),
    }
}

#[test]
fn missing_manifest_is_reported() {
    let err = load_dataset(Path::new("/nonexistent/manifest.json")).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)), "{err}");
}

#[test]
fn missing_signal_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = handmade(dir.path());
    fs::remove_file(dir.path().join("p2_b.csv")).unwrap();
    match load_dataset(&path).unwrap_err() {
        Error::MissingFile(p) => assert!(p.ends_with("p2_b.csv")),
        other => panic!("{other}"),
    }
}

#[test]
fn wrong_column_count_is_a_channel_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = handmade(dir.path());
    fs::write(dir.path().join("p1_a.csv"), "1,2\n3,4,5\n").unwrap();
    match load_dataset(&path).unwrap_err() {
        Error::ChannelMismatch { expected, found, row, .. } => assert_eq!((expected, found, row), (2, 3, 1)),
        other => panic!("{other}"),
    }
}

#[test]
fn unknown_label_and_bad_value_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = handmade(dir.path());
    fs::write(dir.path().join("p1_y.csv"), "sit\nrun\n").unwrap();
    assert!(matches!(load_dataset(&path).unwrap_err(), Error::LabelParse { row: 1, .. }));

    let path = handmade(dir.path());
    fs::write(dir.path().join("p1_y.csv"), "0\n7\n").unwrap();
    assert!(matches!(load_dataset(&path).unwrap_err(), Error::LabelParse { row: 1, .. }));

    let path = handmade(dir.path());
    fs::write(dir.path().join("p1_b.csv"), "1\nx\n").unwrap();
    assert!(matches!(load_dataset(&path).unwrap_err(), Error::ValueParse { row: 1, .. }));
}

#[test]
fn label_length_must_match_signals() {
    let dir = tempfile::tempdir().unwrap();
    let path = handmade(dir.path());
    fs::write(dir.path().join("p2_y.csv"), "0\n1\n").unwrap();
    assert!(matches!(load_dataset(&path).unwrap_err(), Error::ShapeMismatch(_)));
}

#[test]
fn malformed_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = handmade(dir.path());
    let good = fs::read_to_string(&path).unwrap();

    fs::write(&path, "{ not json").unwrap();
    assert!(matches!(load_dataset(&path).unwrap_err(), Error::Manifest { .. }));

    let mut m: DatasetManifest = serde_json::from_str(&good).unwrap();
    m.recordings[0].signals.pop();
    m.save(&path).unwrap();
    assert!(matches!(load_dataset(&path).unwrap_err(), Error::Manifest { .. }));

    let mut m: DatasetManifest = serde_json::from_str(&good).unwrap();
    m.overlap = 1.0;
    m.save(&path).unwrap();
    assert!(matches!(load_dataset(&path).unwrap_err(), Error::Manifest { .. }));
}

#[test]
fn manifest_defaults_apply_when_window_settings_are_omitted() {
    let m: DatasetManifest = serde_json::from_str(
        r#"{"name": "x", "sampling_rate": 50, "modalities": [{"name": "acc", "channel_count": 3}],
            "recordings": [], "class_names": ["a", "b"]}"#,
    )
    .unwrap();
    assert_eq!((m.window_length, m.overlap), (400, 0.5));
}

#[test]
fn synthetic_dataset_shape() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_synth();
    let (manifest, path) = synth_generate(&config, dir.path()).unwrap();
    assert_eq!(manifest.recordings.len(), 6);
    assert_eq!(manifest.num_classes(), 3);
    assert_eq!(manifest.channels(), vec![SYNTH_CHANNELS, SYNTH_CHANNELS]);
    let ds = load_dataset(&path).unwrap();
    assert_eq!(ds.subjects().len(), 6);
    for r in &ds.recordings {
        assert_eq!(r.len(), 3 * config.length_per_class);
        let classes: BTreeSet<usize> = r.labels.iter().copied().collect();
        assert_eq!(classes, BTreeSet::from([0, 1, 2]));
        for c in 0..3 {
            assert_eq!(r.labels.iter().filter(|&&l| l == c).count(), config.length_per_class);
        }
    }
}

#[test]
fn synthetic_dataset_is_byte_identical_per_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config = small_synth();
    synth_generate(&config, a.path()).unwrap();
    synth_generate(&config, b.path()).unwrap();
    synth_generate(&SynthConfig { seed: 1, ..config }, c.path()).unwrap();
    let file = "s03_gyro.csv";
    let read = |d: &tempfile::TempDir| fs::read(d.path().join(file)).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(
        fs::read(a.path().join("manifest.json")).unwrap(),
        fs::read(b.path().join("manifest.json")).unwrap()
    );
}

/// Frequency of the strongest non-DC bin, summed over channels.
fn dominant_frequency(r: &Recording, modality: usize, start: usize, len: usize) -> f64 {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(len);
    let mut power = vec![0.0; len / 2];
    for ch in r.modalities[modality].rows() {
        let mut buf: Vec<Complex<f64>> = ch
            .iter()
            .skip(start)
            .take(len)
            .map(|&x| Complex::new(f64::from(x), 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate().skip(1) {
            *p += buf[k].norm_sqr();
        }
    }
    let k = (1..len / 2).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
    k as f64 / len as f64
}

/// First run of `class` at least `len` long.
fn run_start(labels: &[usize], class: usize, len: usize) -> usize {
    let mut start = 0;
    for t in 0..labels.len() {
        if labels[t] != class {
            start = t + 1;
        } else if t + 1 - start >= len {
            return start;
        }
    }
    panic!("no run of class {class} with length {len}");
}

#[test]
fn class_frequencies_match_an_fft_oracle() {
    let config = SynthConfig::default();
    let len = 256;
    for subject in 0..config.num_subjects {
        let (modalities, labels) = config.recording(subject);
        let r = Recording {
            subject_id: format!("s{subject}"),
            modalities,
            labels,
        };
        for modality in 0..2 {
            let mut found = Vec::new();
            for class in 0..config.classes {
                let start = run_start(&r.labels, class, len);
                let f = dominant_frequency(&r, modality, start, len);
                let expected = config.class_frequency(class);
                // per-subject jitter is 5% std; bins are 1/256 apart
                assert!(
                    (f - expected).abs() <= 0.2 * expected + 1.0 / len as f64,
                    "subject {subject} modality {modality} class {class}: {f} vs {expected}"
                );
                found.push(f);
            }
            assert!(found.windows(2).all(|w| w[0] < w[1]), "{found:?}");
        }
    }
}

#[test]
fn variant_b_doubles_the_gain() {
    let a = SynthConfig::default();
    let b = SynthConfig {
        variant: SynthVariant::B,
        ..SynthConfig::default()
    };
    let (xa, la) = a.recording(2);
    let (xb, lb) = b.recording(2);
    assert_eq!(la, lb);
    for (ma, mb) in xa.iter().zip(&xb) {
        for (&va, &vb) in ma.iter().zip(mb) {
            assert!((vb - 2.0 * va).abs() <= 1e-5 * (1.0 + va.abs()), "{va} {vb}");
        }
    }
}

#[test]
fn synth_config_validation() {
    let bad = SynthConfig {
        num_subjects: 2,
        ..SynthConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::NotEnoughSubjects { .. })));
    let bad = SynthConfig {
        classes: 1,
        ..SynthConfig::default()
    };
    assert!(bad.validate().is_err());
}

fn subjects(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("subj{i:02}")).collect()
}

#[test]
fn split_never_leaks_over_1000_seeds() {
    for seed in 0..1000u64 {
        let n = 3 + (seed as usize % 28);
        let all = subjects(n);
        let stream = SeedStream::new(seed);
        let plan = plan_split(&all, SplitRatios::default(), &stream).unwrap();
        let (tr, va, te) = (&plan.train_subjects, &plan.val_subjects, &plan.test_subjects);
        assert!(tr.is_disjoint(va) && tr.is_disjoint(te) && va.is_disjoint(te), "seed {seed}");
        assert!(!tr.is_empty() && !va.is_empty() && !te.is_empty(), "seed {seed}");
        assert_eq!(tr.len() + va.len() + te.len(), n);
        assert_eq!(plan, plan_split(&all, SplitRatios::default(), &stream).unwrap());
    }
}

#[test]
fn folds_test_every_subject_once_over_1000_seeds() {
    for seed in 0..1000u64 {
        let n = 4 + (seed as usize % 20);
        let folds = 2 + (seed as usize % (n - 1)).min(n - 2);
        let plans = kfold_plans(&subjects(n), folds, 0.2, &SeedStream::new(seed)).unwrap();
        assert_eq!(plans.len(), folds);
        let mut tested = Vec::new();
        for p in &plans {
            assert!(p.train_subjects.is_disjoint(&p.test_subjects));
            assert!(p.val_subjects.is_disjoint(&p.test_subjects));
            assert!(p.train_subjects.is_disjoint(&p.val_subjects));
            assert!(!p.train_subjects.is_empty() && !p.test_subjects.is_empty());
            tested.extend(p.test_subjects.iter().cloned());
        }
        tested.sort();
        assert_eq!(tested, subjects(n), "seed {seed}");
    }
}

#[test]
fn split_applies_to_samples_by_subject() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = synth_generate(&small_synth(), dir.path()).unwrap();
    let ds = load_dataset(&path).unwrap();
    let samples = segment_dataset(&ds).unwrap();
    let plan = plan_split(&ds.subjects(), SplitRatios::default(), &SeedStream::new(3)).unwrap();
    let splits = plan.apply(&samples);
    assert_eq!(splits.train.len() + splits.val.len() + splits.test.len(), samples.len());
    assert!(splits.test.iter().all(|s| plan.test_subjects.contains(s.subject_id())));
    assert!(splits.train.iter().all(|s| plan.train_subjects.contains(s.subject_id())));
    plan.audit("test", &splits.train).unwrap();
    assert!(matches!(plan.audit("test", &splits.test), Err(Error::Leakage(_))));
}

fn window_sample(values: Vec<f32>, channels: usize, subject: &str) -> Sample {
    let len = values.len() / channels;
    let a = ndarray::Array2::from_shape_vec((channels, len), values).unwrap();
    Sample::Unimodal(Window::new(a, "acc", subject, Some(0)))
}

fn channel_moments(samples: &[Sample], ch: usize) -> (f64, f64) {
    let xs: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.primary().values.row(ch).iter().map(|&x| f64::from(x)).collect::<Vec<_>>())
        .collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zscore_standardizes_training_channels(
        raw in prop::collection::vec(prop::collection::vec(-50.0f32..50.0, 24), 2..8),
        offset in -100.0f32..100.0,
        scale in 0.1f32..20.0,
    ) {
        let train: Vec<Sample> = raw
            .iter()
            .map(|v| window_sample(v.iter().map(|x| x * scale + offset).collect(), 3, "a"))
            .collect();
        let (normed, _, stats) = zscore_fit_apply(&train, &[]).unwrap();
        for ch in 0..3 {
            let (mean, sd) = channel_moments(&normed, ch);
            prop_assert!(mean.abs() < 1e-5, "mean {mean}");
            if stats.std[0][ch] > 1e-3 {
                prop_assert!((sd - 1.0).abs() < 1e-5, "std {sd}");
            }
        }
        // a second pass is (numerically) the identity
        let again = ZScoreStats::fit(&normed).unwrap().apply(&normed);
        for (a, b) in normed.iter().zip(&again) {
            for (x, y) in a.primary().values.iter().zip(b.primary().values.iter()) {
                prop_assert!((x - y).abs() < 1e-4, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn segment_count_and_stride(len in 0usize..300, window in 1usize..64, overlap in 0.0f64..0.95) {
        let r = Recording {
            subject_id: "s".into(),
            modalities: vec![ndarray::Array2::from_shape_fn((2, len), |(c, t)| (c * 1000 + t) as f32)],
            labels: (0..len).map(|t| t / 50).collect(),
        };
        let out = segment(&r, &["acc".to_string()], window, overlap).unwrap();
        let step = stride(window, overlap);
        let expected = if len < window { 0 } else { (len - window) / step + 1 };
        prop_assert_eq!(out.len(), expected);
        for (i, s) in out.iter().enumerate() {
            let w = s.primary();
            prop_assert_eq!(w.len(), window);
            prop_assert_eq!(w.values[[1, 0]], (1000 + i * step) as f32);
            let labels = &r.labels[i * step..i * step + window];
            let l = w.label.unwrap();
            let count = labels.iter().filter(|&&x| x == l).count();
            prop_assert!(labels.iter().all(|&x| labels.iter().filter(|&&y| y == x).count() <= count));
        }
    }
}

#[test]
fn test_statistics_never_leak_into_normalization() {
    let train = vec![window_sample(vec![0.0, 2.0, 4.0, 6.0], 1, "a")];
    let test = vec![window_sample(vec![1000.0, 1000.0, 1000.0, 1000.0], 1, "b")];
    let (_, _, with_test) = zscore_fit_apply(&train, &[&test]).unwrap();
    let (_, _, alone) = zscore_fit_apply(&train, &[]).unwrap();
    assert_eq!(with_test, alone);
    assert_eq!(alone.mean[0][0], 3.0);
}
