//! Synthetic two-modality recordings for offline runs.
//!
//! Class `c` drives both modalities with a sinusoid at its own base
//! frequency; the second modality lags the first by a class-specific phase.
//! Subjects differ in gain, noise level, frequency and sensor orientation.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ModalitySpec, RecordingEntry};
use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::transforms::random_orthogonal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthVariant {
    A,
    /// Same classes, larger subject gains.
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub name: String,
    pub num_subjects: usize,
    pub classes: usize,
    pub length_per_class: usize,
    pub seed: u64,
    pub variant: SynthVariant,
    pub window_length: usize,
    pub overlap: f64,
    pub sampling_rate: f64,
    /// Cycles per sample of class 0.
    pub base_frequency: f64,
    /// Frequency ratio between consecutive classes.
    pub frequency_step: f64,
    /// Relative per-subject frequency jitter (std).
    pub frequency_jitter: f64,
    pub gain_range: (f64, f64),
    pub noise_range: (f64, f64),
    /// Class segments are cut into this many interleaved blocks.
    pub blocks_per_class: usize,
    /// Std of a slow AR(1) drift added to every source channel.
    pub drift_level: f64,
    /// AR(1) coefficient of the drift.
    pub drift_coeff: f64,
    /// Amplitude of the second harmonic, whose phase depends on the class.
    pub harmonic: f64,
    /// Scales the per-channel phase offsets; 0 makes all channels copies of
    /// one waveform.
    pub channel_phase_spread: f64,
    /// Draw a new sensor orientation for every block instead of per subject.
    pub reorient_blocks: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            num_subjects: 6,
            classes: 3,
            length_per_class: 1600,
            seed: 0,
            variant: SynthVariant::A,
            window_length: 64,
            overlap: 0.5,
            sampling_rate: 50.0,
            base_frequency: 1.0 / 16.0,
            frequency_step: 1.4,
            frequency_jitter: 0.05,
            gain_range: (0.5, 1.5),
            noise_range: (0.2, 0.6),
            blocks_per_class: 4,
            drift_level: 0.0,
            drift_coeff: 0.98,
            harmonic: 0.0,
            channel_phase_spread: 1.0,
            reorient_blocks: false,
        }
    }
}

pub const SYNTH_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy)]
struct SubjectParams {
    gain: [f64; 2],
    noise: f64,
    freq_scale: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument("synthetic data needs >= 2 classes".into()));
        }
        if self.num_subjects < 3 {
            return Err(Error::NotEnoughSubjects {
                needed: 3,
                have: self.num_subjects,
            });
        }
        if self.length_per_class == 0 || self.blocks_per_class == 0 {
            return Err(Error::InvalidArgument("length_per_class and blocks must be > 0".into()));
        }
        Ok(())
    }

    pub fn class_frequency(&self, class: usize) -> f64 {
        self.base_frequency * self.frequency_step.powi(class as i32)
    }

    /// Phase lag of the second modality for `class`.
    pub fn class_lag(&self, class: usize) -> f64 {
        PI * class as f64 / self.classes as f64
    }

    fn subject(&self, seed: &SeedStream) -> SubjectParams {
        let mut rng = seed.rng();
        let (lo, hi) = self.gain_range;
        let shift = match self.variant {
            SynthVariant::A => 1.0,
            SynthVariant::B => 2.0,
        };
        let gain = [rng.gen_range(lo..hi) * shift, rng.gen_range(lo..hi) * shift];
        let noise = rng.gen_range(self.noise_range.0..self.noise_range.1);
        let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
        SubjectParams {
            gain,
            noise,
            freq_scale: 1.0 + self.frequency_jitter * z,
        }
    }

    /// Per-subject recording: `[3 × T]` per modality and per-sample labels.
    pub fn recording(&self, subject: usize) -> (Vec<Array2<f32>>, Vec<usize>) {
        let sseed = SeedStream::new(self.seed).derive(subject as u64);
        let params = self.subject(&sseed.derive(0));
        let mut rng = sseed.derive(1).rng();
        // sensor orientation differs per subject and per modality
        let mut orient = [
            random_orthogonal(SYNTH_CHANNELS, &mut rng),
            random_orthogonal(SYNTH_CHANNELS, &mut rng),
        ];
        let mut blocks: Vec<usize> = (0..self.classes)
            .flat_map(|c| std::iter::repeat_n(c, self.blocks_per_class))
            .collect();
        blocks.shuffle(&mut rng);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let total = self.classes * self.length_per_class;
        let mut u = Array2::<f32>::zeros((SYNTH_CHANNELS, total));
        let mut v = Array2::<f32>::zeros((SYNTH_CHANNELS, total));
        let mut labels = Vec::with_capacity(total);
        let mut t0 = 0;
        let innovation = self.drift_level * (1.0 - self.drift_coeff * self.drift_coeff).sqrt();
        let mut drift = [[0.0f64; SYNTH_CHANNELS]; 2];
        for d in drift.iter_mut().flatten() {
            *d = self.drift_level * normal.sample(&mut rng);
        }
        let base = self.length_per_class / self.blocks_per_class;
        let mut left = vec![self.blocks_per_class; self.classes];
        for &class in &blocks {
            left[class] -= 1;
            let len = if left[class] == 0 {
                self.length_per_class - base * (self.blocks_per_class - 1)
            } else {
                base
            };
            if self.reorient_blocks {
                orient = [
                    random_orthogonal(SYNTH_CHANNELS, &mut rng),
                    random_orthogonal(SYNTH_CHANNELS, &mut rng),
                ];
            }
            let f = self.class_frequency(class) * params.freq_scale;
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            let lag = self.class_lag(class);
            for t in 0..len {
                let w = 2.0 * PI * f * t as f64 + phase;
                // source components per channel: fundamental and a weaker harmonic
                for d in drift.iter_mut().flatten() {
                    *d = self.drift_coeff * *d + innovation * normal.sample(&mut rng);
                }
                let psi = 2.0 * PI * class as f64 / self.classes as f64;
                let h = self.harmonic;
                let spread = self.channel_phase_spread;
                let wave = |w: f64| w.sin() + h * (2.0 * w + psi).sin();
                let source = |w: f64, d: &[f64; SYNTH_CHANNELS]| {
                    [
                        wave(w) + d[0],
                        0.5 * wave(w + spread * PI / 2.0) + d[1],
                        0.3 * wave(w + spread * PI / 4.0) + d[2],
                    ]
                };
                let su = source(w, &drift[0]);
                let sv = source(w - lag, &drift[1]);
                for (m, (src, out)) in [(su, &mut u), (sv, &mut v)].into_iter().enumerate() {
                    for ch in 0..SYNTH_CHANNELS {
                        let mixed: f64 = (0..SYNTH_CHANNELS).map(|k| orient[m][[ch, k]] * src[k]).sum();
                        let noise = params.noise * normal.sample(&mut rng);
                        out[[ch, t0 + t]] = (params.gain[m] * (mixed + noise)) as f32;
                    }
                }
                labels.push(class);
            }
            t0 += len;
        }
        debug_assert_eq!(t0, total);
        (vec![u, v], labels)
    }
}

fn write_csv(path: &Path, values: &Array2<f32>) -> Result<()> {
    let mut text = String::with_capacity(values.len() * 12);
    for t in 0..values.ncols() {
        let row: Vec<String> = values.column(t).iter().map(|x| x.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the synthetic dataset under `dir` and returns the manifest path.
pub fn synth_generate(config: &SynthConfig, dir: &Path) -> Result<(DatasetManifest, PathBuf)> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let modalities = vec![
        ModalitySpec {
            name: "acc".into(),
            channel_count: SYNTH_CHANNELS,
        },
        ModalitySpec {
            name: "gyro".into(),
            channel_count: SYNTH_CHANNELS,
        },
    ];
    let mut recordings = Vec::with_capacity(config.num_subjects);
    for s in 0..config.num_subjects {
        let subject_id = format!("s{s:02}");
        let (signals, labels) = config.recording(s);
        let mut files = Vec::new();
        for (spec, values) in modalities.iter().zip(&signals) {
            let file = PathBuf::from(format!("{subject_id}_{}.csv", spec.name));
            write_csv(&dir.join(&file), values)?;
            files.push(file);
        }
        let label_file = PathBuf::from(format!("{subject_id}_labels.csv"));
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        fs::write(dir.join(&label_file), text).map_err(|e| Error::io(dir.join(&label_file), e))?;
        recordings.push(RecordingEntry {
            subject_id,
            signals: files,
            labels: label_file,
        });
    }
    let manifest = DatasetManifest {
        name: config.name.clone(),
        sampling_rate: config.sampling_rate,
        modalities,
        recordings,
        class_names: (0..config.classes).map(|c| format!("class{c}")).collect(),
        window_length: config.window_length,
        overlap: config.overlap,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok((manifest, path))
}
